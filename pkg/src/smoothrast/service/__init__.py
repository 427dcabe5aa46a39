"""HTTP service wrapping the renderer: pydantic models, ops, FastAPI app."""
