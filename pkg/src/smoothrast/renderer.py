"""Forward and backward rendering passes.

The hard renderer rasterizes occupancy with a step function of signed
pixel-to-triangle distance and resolves depth with a winner-take-all over
inverse depths.  The soft renderer replaces both argmax steps by their
noise-smoothed expectations, either in closed form (CDF / softmax) or by
Monte-Carlo averaging with noise regenerated from a stored seed.  The
backward pass chains analytic derivatives of projection, signed distance and
barrier scores with score-function estimators (control-variate reduced by
default) for the smoothed stages, and also reports the derivatives of the
loss with respect to both smoothing scales.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .priors import AGG_STAGE, RASTER_STAGE, NoiseStream
from .scene import (Camera, Mesh, Pose, ProjectedScene, apply_pose,
                    pixel_centers, project, rotation_matrix,
                    rotation_matrix_derivs, signed_distance_grad,
                    signed_distance_grid)
from .smooth_core import (OCCUPANCY_FLOOR, SmoothingParams, barrier_scores,
                          softmax)

DEFAULT_BACKGROUND = (0.5, 0.5, 0.5)
DEFAULT_BUDGET_BYTES = 2 << 30

# Pairs with signed distance below -CULL_SIGMAS * sigma are excluded from
# Monte-Carlo rasterization and take the (tiny) closed-form occupancy instead.
CULL_SIGMAS = 6.0


class RenderBudgetError(MemoryError):
    """Monte-Carlo noise buffers would exceed the configured memory budget."""


@dataclass(frozen=True)
class SoftRender:
    """Output of the soft forward pass plus what backward needs.

    Weights hold the per-pixel aggregation simplex over all faces plus the
    background in the last slot; the silhouette is one minus the background
    weight.  Only the seed and smoothing parameters of the Monte-Carlo noise
    are stored; the backward pass regenerates identical draws.
    """

    rgb: np.ndarray          # (h, w, 3) in [0, 1]
    silhouette: np.ndarray   # (h, w) in [0, 1]
    occupancy: np.ndarray    # (h, w, F)
    weights: np.ndarray      # (h, w, F + 1)
    seed: int
    params: SmoothingParams
    ctx: dict                # forward caches consumed by backward()


@dataclass(frozen=True)
class GradReport:
    """Gradients of a scalar loss with respect to scene parameters."""

    d_pose: np.ndarray       # (3,) rotation, or (6,) with translation enabled
    d_vertices: np.ndarray   # (V, 3) object-space vertex gradients
    d_sigma: float
    d_gamma: float


def _stage_modes(params: SmoothingParams):
    """Resolve per-stage evaluation modes from params (hard/closed/mc)."""
    if params.sigma == 0.0:
        raster = "hard"
    elif params.mode == "mc":
        raster = "mc"
    else:
        raster = "closed"
    if params.gamma == 0.0:
        agg = "hard"
    elif params.mode == "mc":
        agg = "mc"
    elif params.mode == "closed":
        if params.agg_prior.name != "gumbel":
            from .priors import PriorSupportError
            raise PriorSupportError(
                "closed-form aggregation requires the gumbel prior "
                f"(got {params.agg_prior.name})")
        agg = "closed"
    else:  # auto
        agg = "closed" if params.agg_prior.name == "gumbel" else "mc"
    return raster, agg


def _full_scores(projected: ProjectedScene, occ_vis: np.ndarray,
                 alpha: float) -> np.ndarray:
    z_vis = projected.z_inv[projected.visible]
    z_full = np.concatenate([z_vis, [projected.z_min]])
    return barrier_scores(z_full, occ_vis, alpha)


def render_hard(projected: ProjectedScene, colors: np.ndarray, image_size,
                background=DEFAULT_BACKGROUND):
    """Rigid Z-buffer render: hard occupancy, nearest occupied face wins.

    Returns (rgb, silhouette) with a binary silhouette.
    """
    h, w = image_size
    pixels = pixel_centers(image_size)
    vis = np.flatnonzero(projected.visible)
    bg = np.asarray(background, dtype=np.float64)
    if len(vis) == 0:
        return np.tile(bg, (h, w, 1)), np.zeros((h, w))
    d, _ = signed_distance_grid(pixels, projected.verts2d[vis])
    occ = d > 0.0
    z_vis = projected.z_inv[vis]
    scores = np.where(occ, z_vis[None, :], -np.inf)
    scores = np.concatenate([scores, np.full((len(pixels), 1), projected.z_min)],
                            axis=1)
    winner = np.argmax(scores, axis=1)
    palette = np.concatenate([colors[vis], bg[None, :]], axis=0)
    rgb = palette[winner].reshape(h, w, 3)
    sil = (winner != len(vis)).astype(np.float64).reshape(h, w)
    return rgb, sil


def _hard_soft_render(projected, colors, image_size, params, seed, background):
    """Package the rigid render as a SoftRender (sigma = gamma = 0)."""
    h, w = image_size
    n = h * w
    pixels = pixel_centers(image_size)
    vis = np.flatnonzero(projected.visible)
    nf = len(projected.verts2d)
    bg = np.asarray(background, dtype=np.float64)
    occ_full = np.zeros((n, nf))
    weights = np.zeros((n, nf + 1))
    if len(vis):
        d, dist_cache = signed_distance_grid(pixels, projected.verts2d[vis])
        occ = (d > 0.0).astype(np.float64)
        scores = np.where(occ > 0, projected.z_inv[vis][None, :], -np.inf)
        scores = np.concatenate([scores, np.full((n, 1), projected.z_min)], axis=1)
        winner = np.argmax(scores, axis=1)
        palette = np.concatenate([colors[vis], bg[None, :]], axis=0)
        rgb = palette[winner]
        occ_full[:, vis] = occ
        w_cols = np.concatenate([vis, [nf]])
        weights[np.arange(n), w_cols[winner]] = 1.0
    else:
        rgb = np.tile(bg, (n, 1))
        weights[:, nf] = 1.0
    sil = 1.0 - weights[:, nf]
    ctx = {"hard": True, "image_size": image_size, "vis": vis}
    return SoftRender(rgb=rgb.reshape(h, w, 3), silhouette=sil.reshape(h, w),
                      occupancy=occ_full.reshape(h, w, nf),
                      weights=weights.reshape(h, w, nf + 1),
                      seed=seed, params=params, ctx=ctx)


def render_soft(projected: ProjectedScene, colors: np.ndarray, image_size,
                params: SmoothingParams, seed: int,
                background=DEFAULT_BACKGROUND,
                budget_bytes: int = DEFAULT_BUDGET_BYTES) -> SoftRender:
    """Smoothed render: every pixel is influenced by every visible face.

    With both noise scales at zero this reproduces :func:`render_hard`
    bit for bit.  Monte-Carlo noise is drawn from counter-based streams keyed
    by (seed, stage); nothing but the seed is kept for the backward pass.
    """
    h, w = image_size
    if h < 1 or w < 1:
        raise ValueError("image dimensions must be positive")
    if params.sigma == 0.0 and params.gamma == 0.0:
        return _hard_soft_render(projected, colors, image_size, params, seed,
                                 background)
    raster_mode, agg_mode = _stage_modes(params)
    n = h * w
    pixels = pixel_centers(image_size)
    vis = np.flatnonzero(projected.visible)
    nf = len(projected.verts2d)
    fv = len(vis)
    k = fv + 1
    bg = np.asarray(background, dtype=np.float64)
    m = params.samples

    occ_full = np.zeros((n, nf))
    weights_full = np.zeros((n, nf + 1))
    ctx = {"hard": False, "image_size": image_size, "vis": vis,
           "raster_mode": raster_mode, "agg_mode": agg_mode,
           "background": bg, "colors_vis": colors[vis] if fv else colors[:0]}

    if fv == 0:
        weights_full[:, nf] = 1.0
        rgb = np.tile(bg, (n, 1))
        return SoftRender(rgb=rgb.reshape(h, w, 3),
                          silhouette=np.zeros((h, w)),
                          occupancy=occ_full.reshape(h, w, nf),
                          weights=weights_full.reshape(h, w, nf + 1),
                          seed=seed, params=params, ctx=ctx)

    d, dist_cache = signed_distance_grid(pixels, projected.verts2d[vis])
    ctx["d"] = d
    ctx["dist_cache"] = dist_cache

    # -- rasterization: occupancy ------------------------------------------
    sigma = params.sigma
    finite_d = np.isfinite(d)
    if raster_mode == "hard":
        occ = (d > 0.0).astype(np.float64)
    elif raster_mode == "closed":
        occ = np.asarray(params.raster_prior.heaviside_cdf(
            np.where(finite_d, d, -1.0) / sigma), dtype=np.float64)
        occ[~finite_d] = 0.0
    else:
        occ = np.asarray(params.raster_prior.heaviside_cdf(
            np.where(finite_d, d, -1.0) / sigma), dtype=np.float64)
        occ[~finite_d] = 0.0
        if params.mc_cull:
            pair_mask = finite_d & (d > -CULL_SIGMAS * sigma)
        else:
            pair_mask = finite_d.copy()
        npairs = int(pair_mask.sum())
        ctx["pair_mask"] = pair_mask
        _check_budget(m, npairs, n, k, agg_mode == "mc", budget_bytes)
        if npairs:
            d_pairs = d[pair_mask].astype(np.float32)
            x = params.raster_prior.sample_block(
                NoiseStream(seed, stage=RASTER_STAGE), (m, npairs), np.float32)
            hits = (d_pairs[None, :] + np.float32(sigma) * x) > 0
            occ[pair_mask] = hits.mean(axis=0, dtype=np.float64)
    ctx["occ_vis"] = occ
    occ_full[:, vis] = occ

    # -- aggregation: simplex weights over faces + background ---------------
    gamma = params.gamma
    scores = _full_scores(projected, occ, params.alpha)
    ctx["scores"] = scores
    if agg_mode == "hard":
        idx = np.argmax(scores, axis=1)
        wts = np.zeros((n, k))
        wts[np.arange(n), idx] = 1.0
    elif agg_mode == "closed":
        wts = softmax(scores / gamma)
    else:
        if "pair_mask" not in ctx:
            _check_budget(m, 0, n, k, True, budget_bytes)
        z = params.agg_prior.sample_block(
            NoiseStream(seed, stage=AGG_STAGE), (m, n, k), np.float32)
        idx = np.argmax(scores.astype(np.float32)[None, :, :]
                        + np.float32(gamma) * z, axis=-1)
        flat = (idx + np.arange(n, dtype=np.int64)[None, :] * k).ravel()
        wts = (np.bincount(flat, minlength=n * k)
               .reshape(n, k).astype(np.float64) / m)
    ctx["w_vis"] = wts

    weights_full[:, vis] = wts[:, :fv]
    weights_full[:, nf] = wts[:, fv]
    rgb = wts[:, :fv] @ colors[vis] + wts[:, fv:fv + 1] * bg[None, :]
    np.clip(rgb, 0.0, 1.0, out=rgb)
    sil = 1.0 - wts[:, fv]
    return SoftRender(rgb=rgb.reshape(h, w, 3), silhouette=sil.reshape(h, w),
                      occupancy=occ_full.reshape(h, w, nf),
                      weights=weights_full.reshape(h, w, nf + 1),
                      seed=seed, params=params, ctx=ctx)


def _check_budget(m, npairs, n, k, agg_mc, budget_bytes):
    need = 3 * 4 * m * npairs
    if agg_mc:
        need += 3 * 4 * m * n * k
    if need > budget_bytes:
        raise RenderBudgetError(
            f"Monte-Carlo buffers need about {need / 1e6:.0f} MB "
            f"(> budget {budget_bytes / 1e6:.0f} MB); lower the sample count, "
            "image size, or raise the budget")


def render_scene(mesh: Mesh, camera: Camera, pose: Pose,
                 params: SmoothingParams, seed: int, colors=None,
                 background=DEFAULT_BACKGROUND,
                 budget_bytes: int = DEFAULT_BUDGET_BYTES) -> SoftRender:
    """Project a posed mesh and run the soft renderer."""
    projected = project(mesh, camera, pose)
    if colors is None:
        colors = mesh.face_colors
    return render_soft(projected, colors, camera.image_size, params, seed,
                       background=background, budget_bytes=budget_bytes)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def backward(render: SoftRender, mesh: Mesh, camera: Camera, pose: Pose,
             dL_dimage: np.ndarray, include_translation: bool = False) -> GradReport:
    """Chain-rule gradients of a scalar loss through the soft render.

    ``dL_dimage`` is the (h, w, 3) adjoint of the rendered image.  Monte-Carlo
    stages regenerate their noise from the stored seed and apply the
    control-variate score estimator (or the plain one when params.vr is off);
    closed stages use analytic sigmoid/softmax derivatives.  Also returns the
    scalar sensitivities d_sigma and d_gamma used by adaptive smoothing.
    """
    h, w = render.ctx["image_size"]
    adj = np.asarray(dL_dimage, dtype=np.float64)
    if adj.shape != (h, w, 3):
        raise ValueError(f"adjoint shape {adj.shape} does not match image "
                         f"({h}, {w}, 3)")
    if not np.isfinite(adj).all():
        raise ValueError("adjoint contains non-finite entries")

    nv = mesh.num_vertices
    zeros = GradReport(
        d_pose=np.zeros(6 if include_translation else 3),
        d_vertices=np.zeros((nv, 3)), d_sigma=0.0, d_gamma=0.0)
    if render.ctx.get("hard") or len(render.ctx["vis"]) == 0:
        return zeros

    params = render.params
    vis = render.ctx["vis"]
    fv = len(vis)
    k = fv + 1
    n = h * w
    m = params.samples
    g_img = adj.reshape(n, 3)

    colors_vis = render.ctx["colors_vis"]
    bg = render.ctx["background"]
    scores = render.ctx["scores"]
    wts = render.ctx["w_vis"]
    occ = render.ctx["occ_vis"]
    d = render.ctx["d"]
    seed = render.seed

    # image -> weights
    g_w = np.concatenate([g_img @ colors_vis.T, (g_img @ bg)[:, None]], axis=1)

    # weights -> scores (aggregation stage) and d_gamma
    agg_mode = render.ctx["agg_mode"]
    d_gamma = 0.0
    if agg_mode == "hard":
        g_scores = np.zeros((n, k))
    elif agg_mode == "closed":
        gamma = params.gamma
        t = wts * g_w
        g_scores = (t - wts * t.sum(axis=1, keepdims=True)) / gamma
        d_gamma = float(-(g_scores * scores).sum() / gamma)
    else:
        gamma = params.gamma
        z = params.agg_prior.sample_block(
            NoiseStream(seed, stage=AGG_STAGE), (m, n, k), np.float32)
        s32 = scores.astype(np.float32)
        idx = np.argmax(s32[None, :, :] + np.float32(gamma) * z, axis=-1)
        g_w32 = g_w.astype(np.float32)
        rows = np.arange(n)[None, :]
        picked = g_w32[rows, idx]                      # (m, n)
        if params.vr:
            base = g_w32[rows, np.argmax(scores, axis=1)[None, :]]
            c = picked - base
        else:
            c = picked
        nug = params.agg_prior.nu_grad(z)
        g_scores = np.einsum("mn,mnk->nk", c, nug).astype(np.float64) / (m * gamma)
        rowdot = np.einsum("mnk,mnk->mn", nug, z)
        d_gamma = float((c * (rowdot - np.float32(k))).sum(dtype=np.float64)
                        / (m * gamma))

    # scores -> inverse depths and occupancy (barrier stage)
    g_z_vis = g_scores[:, :fv].sum(axis=0)
    occ_clamped = occ > OCCUPANCY_FLOOR
    g_occ = np.where(occ_clamped,
                     g_scores[:, :fv] / (params.alpha * np.maximum(occ, OCCUPANCY_FLOOR)),
                     0.0)

    # occupancy -> signed distance (rasterization stage) and d_sigma
    raster_mode = render.ctx["raster_mode"]
    sigma = params.sigma
    d_sigma = 0.0
    finite_d = np.isfinite(d)
    if raster_mode == "hard":
        g_d = np.zeros_like(d)
    elif raster_mode == "closed":
        dz = np.where(finite_d, d, 0.0)
        pdf = np.asarray(params.raster_prior.heaviside_pdf(dz / sigma),
                         dtype=np.float64)
        pdf[~finite_d] = 0.0
        g_d = g_occ * pdf / sigma
        d_sigma = float(-(g_occ * pdf * dz).sum() / (sigma * sigma))
    else:
        # Closed-form fallback on culled pairs, Monte-Carlo on the rest.
        dz = np.where(finite_d, d, 0.0)
        pdf = np.asarray(params.raster_prior.heaviside_pdf(dz / sigma),
                         dtype=np.float64)
        pdf[~finite_d] = 0.0
        pair_mask = render.ctx["pair_mask"]
        culled = ~pair_mask
        g_d = np.where(culled, g_occ * pdf / sigma, 0.0)
        d_sigma = float(np.where(culled, -g_occ * pdf * dz, 0.0).sum()
                        / (sigma * sigma))
        npairs = int(pair_mask.sum())
        if npairs:
            d_pairs = d[pair_mask].astype(np.float32)
            x = params.raster_prior.sample_block(
                NoiseStream(seed, stage=RASTER_STAGE), (m, npairs), np.float32)
            hits = ((d_pairs[None, :] + np.float32(sigma) * x) > 0)
            hf = hits.astype(np.float32)
            if params.vr:
                hf -= (d_pairs > 0).astype(np.float32)[None, :]
            nug = params.raster_prior.nu_grad(x)
            g_occ_pairs = g_occ[pair_mask]
            slope = np.einsum("mp,mp->p", hf, nug).astype(np.float64) / (m * sigma)
            g_d[pair_mask] = g_occ_pairs * slope
            sens = np.einsum("mp,mp->p", hf, nug * x - np.float32(1.0))
            d_sigma += float((g_occ_pairs * sens.astype(np.float64)).sum() / (m * sigma))

    # signed distance -> projected 2D vertices
    g_verts2d = signed_distance_grad(g_d, render.ctx["dist_cache"])

    # projection chain -> world-space vertices
    world = apply_pose(mesh, pose)
    right, up, fwd = camera.frame()
    eye = np.asarray(camera.eye, dtype=np.float64)
    rel = world - eye
    xc = rel @ right
    yc = rel @ up
    depth = rel @ fwd
    tan_half = np.tan(camera.fov / 2.0)
    aspect = w / h
    safe = np.where(depth > 1e-12, depth, 1.0)

    jx = (right[None, :] - np.outer(xc / safe, fwd)) / (safe * tan_half * aspect)[:, None]
    jy = (up[None, :] - np.outer(yc / safe, fwd)) / (safe * tan_half)[:, None]

    fverts = mesh.faces[vis]                      # (fv, 3)
    coef_x = np.zeros(nv)
    coef_y = np.zeros(nv)
    np.add.at(coef_x, fverts.ravel(), g_verts2d[:, :, 0].ravel())
    np.add.at(coef_y, fverts.ravel(), g_verts2d[:, :, 1].ravel())
    g_world = coef_x[:, None] * jx + coef_y[:, None] * jy

    # inverse depth path: z_j = 1 / mean vertex depth of the face centroid
    z_vis = np.where(depth[fverts].mean(axis=1) > 1e-12,
                     1.0 / np.maximum(depth[fverts].mean(axis=1), 1e-12), 0.0)
    g_depth_face = -g_z_vis * z_vis * z_vis / 3.0
    coef_d = np.zeros(nv)
    np.add.at(coef_d, fverts.ravel(), np.repeat(g_depth_face, 3))
    g_world += coef_d[:, None] * fwd[None, :]

    # world -> pose and object-space vertices
    rot = rotation_matrix(pose)
    derivs = rotation_matrix_derivs(pose)
    d_rot = np.array([np.sum(g_world * (mesh.vertices @ derivs[i].T))
                      for i in range(3)])
    d_vertices = g_world @ rot
    if include_translation:
        d_pose = np.concatenate([d_rot, g_world.sum(axis=0)])
    else:
        d_pose = d_rot
    return GradReport(d_pose=d_pose, d_vertices=d_vertices,
                      d_sigma=float(d_sigma), d_gamma=float(d_gamma))


# ---------------------------------------------------------------------------
# image output
# ---------------------------------------------------------------------------


def save_png(path, image: np.ndarray) -> None:
    """Write an image in [0, 1] (grayscale or RGB) as 8-bit PNG."""
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    data = (arr * 255.0).round().astype(np.uint8)
    Image.fromarray(data).save(path, format="PNG")


def save_float_raw(path, image: np.ndarray) -> None:
    """Lossless float32 dump (NPY format: magic header, dims, row-major)."""
    np.save(path, np.asarray(image, dtype=np.float32))


def load_float_raw(path) -> np.ndarray:
    return np.load(path)
