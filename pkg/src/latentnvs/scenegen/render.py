"""Deterministic ray-cast renderer: Lambertian primitives over a ground
plane with a flat sky.

Two implementations share bitwise-identical float64 arithmetic: a numba
per-pixel loop and a vectorized numpy path (`backend` picks one).  Both
consume the same precomputed ray grid, mirror each other's operation
order exactly, and avoid fastmath, so a shard's pixel values do not
depend on the backend flag.  NaN corner cases (ray origin exactly on a
box slab plane while travelling parallel to it) are measure-zero for
the float64 camera distribution and are not defended against.
"""

from __future__ import annotations

import numpy as np

from ..backend import use_numba
from .camera import CameraPose
from .scenes import SceneSpec

AMBIENT = 0.25
SKY = np.array([0.62, 0.70, 0.83])
T_EPS = 1e-6

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False


def ray_grid(cam: CameraPose, h: int, w: int, fov_y_deg: float) -> tuple[np.ndarray, np.ndarray]:
    """Returns (origin (3,), world-space unit directions (h*w, 3)), float64.

    Pixel (i, j) maps to image-plane coordinates ((j+0.5)/w, (i+0.5)/h);
    row 0 is the top of the image.
    """
    tan_y = np.tan(np.deg2rad(fov_y_deg) / 2.0)
    tan_x = tan_y * (w / h)
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    px = (2.0 * (jj + 0.5) / w - 1.0) * tan_x
    py = (1.0 - 2.0 * (ii + 0.5) / h) * tan_y
    r, u, f = cam.basis()
    d = px[..., None] * r + py[..., None] * u + f
    d /= np.sqrt(np.sum(d * d, axis=-1, keepdims=True))
    return cam.position.copy(), d.reshape(-1, 3)


def _pack(spec: SceneSpec):
    spheres = [o for o in spec.objects if o.kind == "sphere"]
    boxes = [o for o in spec.objects if o.kind == "box"]
    sph_c = np.array([o.center for o in spheres]).reshape(-1, 3)
    sph_r = np.array([o.size[0] for o in spheres]).reshape(-1)
    sph_alb = np.array([o.albedo for o in spheres]).reshape(-1, 3)
    box_c = np.array([o.center for o in boxes]).reshape(-1, 3)
    box_h = np.array([o.size for o in boxes]).reshape(-1, 3)
    box_alb = np.array([o.albedo for o in boxes]).reshape(-1, 3)
    return sph_c, sph_r, sph_alb, box_c, box_h, box_alb


def _shade_numpy(origin, dirs, sph_c, sph_r, sph_alb, box_c, box_h, box_alb, ground_alb, light):
    n = dirs.shape[0]
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    ox, oy, oz = origin

    t_best = np.full(n, np.inf)
    alb = np.zeros((n, 3))
    nrm = np.zeros((n, 3))

    with np.errstate(divide="ignore", invalid="ignore"):
        # Ground plane z=0 (camera is above it).
        t = np.divide(-oz, dz)
        upd = (dz < 0.0) & (t > T_EPS) & (t < t_best)
        t_best = np.where(upd, t, t_best)
        alb = np.where(upd[:, None], ground_alb, alb)
        nrm = np.where(upd[:, None], np.array([0.0, 0.0, 1.0]), nrm)

        for s in range(sph_c.shape[0]):
            qx = ox - sph_c[s, 0]
            qy = oy - sph_c[s, 1]
            qz = oz - sph_c[s, 2]
            b = qx * dx + qy * dy + qz * dz
            c2 = (qx * qx + qy * qy + qz * qz) - sph_r[s] * sph_r[s]
            disc = b * b - c2
            sq = np.sqrt(np.maximum(disc, 0.0))
            t = -b - sq
            upd = (disc >= 0.0) & (t > T_EPS) & (t < t_best)
            hx = ox + t * dx - sph_c[s, 0]
            hy = oy + t * dy - sph_c[s, 1]
            hz = oz + t * dz - sph_c[s, 2]
            inv_r = np.divide(1.0, sph_r[s])
            t_best = np.where(upd, t, t_best)
            alb = np.where(upd[:, None], sph_alb[s], alb)
            new_n = np.stack([hx * inv_r, hy * inv_r, hz * inv_r], axis=-1)
            nrm = np.where(upd[:, None], new_n, nrm)

        for s in range(box_c.shape[0]):
            tn = np.full(n, -np.inf)
            tf = np.full(n, np.inf)
            axis_t = []
            for a, (da, oa) in enumerate(((dx, ox), (dy, oy), (dz, oz))):
                lo = box_c[s, a] - box_h[s, a]
                hi = box_c[s, a] + box_h[s, a]
                t1 = np.divide(lo - oa, da)
                t2 = np.divide(hi - oa, da)
                tna = np.minimum(t1, t2)
                tfa = np.maximum(t1, t2)
                axis_t.append(tna)
                tn = np.maximum(tn, tna)
                tf = np.minimum(tf, tfa)
            upd = (tn <= tf) & (tn > T_EPS) & (tn < t_best)
            # Entering axis: first axis whose near-t equals tn (x before y
            # before z on ties, matching the scalar path).
            is_x = tn == axis_t[0]
            is_y = (~is_x) & (tn == axis_t[1])
            sgn = [np.where(dv >= 0.0, -1.0, 1.0) for dv in (dx, dy, dz)]
            new_n = np.stack(
                [
                    np.where(is_x, sgn[0], 0.0),
                    np.where(is_y, sgn[1], 0.0),
                    np.where(is_x | is_y, 0.0, sgn[2]),
                ],
                axis=-1,
            )
            t_best = np.where(upd, tn, t_best)
            alb = np.where(upd[:, None], box_alb[s], alb)
            nrm = np.where(upd[:, None], new_n, nrm)

    ndotl = nrm[:, 0] * light[0] + nrm[:, 1] * light[1] + nrm[:, 2] * light[2]
    lam = AMBIENT + (1.0 - AMBIENT) * np.maximum(0.0, ndotl)
    rgb = alb * lam[:, None]
    hit = t_best < np.inf
    rgb = np.where(hit[:, None], rgb, SKY)
    return np.minimum(np.maximum(rgb, 0.0), 1.0)


if _HAVE_NUMBA:

    @njit
    def _shade_numba(origin, dirs, sph_c, sph_r, sph_alb, box_c, box_h, box_alb, ground_alb, light, sky, out):
        n = dirs.shape[0]
        ox, oy, oz = origin[0], origin[1], origin[2]
        for i in range(n):
            dx, dy, dz = dirs[i, 0], dirs[i, 1], dirs[i, 2]
            t_best = np.inf
            ar = ag = ab = 0.0
            nx = ny = nz = 0.0

            if dz < 0.0:
                t = np.divide(-oz, dz)
                if t > T_EPS and t < t_best:
                    t_best = t
                    ar, ag, ab = ground_alb[0], ground_alb[1], ground_alb[2]
                    nx, ny, nz = 0.0, 0.0, 1.0

            for s in range(sph_c.shape[0]):
                qx = ox - sph_c[s, 0]
                qy = oy - sph_c[s, 1]
                qz = oz - sph_c[s, 2]
                b = qx * dx + qy * dy + qz * dz
                c2 = (qx * qx + qy * qy + qz * qz) - sph_r[s] * sph_r[s]
                disc = b * b - c2
                if disc >= 0.0:
                    t = -b - np.sqrt(disc)
                    if t > T_EPS and t < t_best:
                        hx = ox + t * dx - sph_c[s, 0]
                        hy = oy + t * dy - sph_c[s, 1]
                        hz = oz + t * dz - sph_c[s, 2]
                        inv_r = np.divide(1.0, sph_r[s])
                        t_best = t
                        ar, ag, ab = sph_alb[s, 0], sph_alb[s, 1], sph_alb[s, 2]
                        nx, ny, nz = hx * inv_r, hy * inv_r, hz * inv_r

            for s in range(box_c.shape[0]):
                tn = -np.inf
                tf = np.inf
                tnx = tny = 0.0
                for a in range(3):
                    if a == 0:
                        da, oa = dx, ox
                    elif a == 1:
                        da, oa = dy, oy
                    else:
                        da, oa = dz, oz
                    lo = box_c[s, a] - box_h[s, a]
                    hi = box_c[s, a] + box_h[s, a]
                    t1 = np.divide(lo - oa, da)
                    t2 = np.divide(hi - oa, da)
                    tna = np.minimum(t1, t2)
                    tfa = np.maximum(t1, t2)
                    if a == 0:
                        tnx = tna
                    elif a == 1:
                        tny = tna
                    tn = np.maximum(tn, tna)
                    tf = np.minimum(tf, tfa)
                if tn <= tf and tn > T_EPS and tn < t_best:
                    t_best = tn
                    ar, ag, ab = box_alb[s, 0], box_alb[s, 1], box_alb[s, 2]
                    if tn == tnx:
                        nx = -1.0 if dx >= 0.0 else 1.0
                        ny = 0.0
                        nz = 0.0
                    elif tn == tny:
                        nx = 0.0
                        ny = -1.0 if dy >= 0.0 else 1.0
                        nz = 0.0
                    else:
                        nx = 0.0
                        ny = 0.0
                        nz = -1.0 if dz >= 0.0 else 1.0

            if t_best < np.inf:
                ndotl = nx * light[0] + ny * light[1] + nz * light[2]
                lam = AMBIENT + (1.0 - AMBIENT) * np.maximum(0.0, ndotl)
                r = ar * lam
                g = ag * lam
                b = ab * lam
            else:
                r, g, b = sky[0], sky[1], sky[2]
            out[i, 0] = np.minimum(np.maximum(r, 0.0), 1.0)
            out[i, 1] = np.minimum(np.maximum(g, 0.0), 1.0)
            out[i, 2] = np.minimum(np.maximum(b, 0.0), 1.0)


def render_view(spec: SceneSpec, cam: CameraPose, h: int, w: int, fov_y_deg: float = 45.0) -> np.ndarray:
    """Render spec from cam as an (h, w, 3) float32 image in [0, 1]."""
    if h % 2 or w % 2 or h < 16 or w < 16:
        raise ValueError(f"image size must be even and >= 16, got {h}x{w}")
    origin, dirs = ray_grid(cam, h, w, fov_y_deg)
    packed = _pack(spec)
    if _HAVE_NUMBA and use_numba():
        out = np.empty((h * w, 3))
        _shade_numba(origin, dirs, *packed, spec.ground_albedo, spec.light_dir, SKY, out)
    else:
        out = _shade_numpy(origin, dirs, *packed, spec.ground_albedo, spec.light_dir)
    return out.reshape(h, w, 3).astype(np.float32)
