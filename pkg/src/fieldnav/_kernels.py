"""Numba-compiled hot loops: lidar raycasting, beam integration, likelihood scoring.

Everything here is pure float/int arithmetic on preallocated arrays so results
are bitwise deterministic and independent of thread count. RNG draws never
happen inside a kernel.
"""

import math

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi


@njit(cache=True)
def raycast(occ, px, py, angles, range_max, res, ox, oy):
    """March each beam through the grid (Amanatides-Woo DDA).

    occ is a bool array (rows = y cells). (px, py) is the beam origin in world
    meters, angles are absolute beam directions. Returns one range per beam:
    distance to the boundary of the first occupied cell, or range_max when the
    beam exits the grid or exceeds range_max (no return).
    """
    h, w = occ.shape
    n = angles.shape[0]
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        dx = math.cos(angles[i])
        dy = math.sin(angles[i])
        cx = int(math.floor((px - ox) / res))
        cy = int(math.floor((py - oy) / res))
        if dx > 0.0:
            step_x = 1
            t_max_x = ((cx + 1) * res + ox - px) / dx
            t_dx = res / dx
        elif dx < 0.0:
            step_x = -1
            t_max_x = (cx * res + ox - px) / dx
            t_dx = -res / dx
        else:
            step_x = 0
            t_max_x = math.inf
            t_dx = math.inf
        if dy > 0.0:
            step_y = 1
            t_max_y = ((cy + 1) * res + oy - py) / dy
            t_dy = res / dy
        elif dy < 0.0:
            step_y = -1
            t_max_y = (cy * res + oy - py) / dy
            t_dy = -res / dy
        else:
            step_y = 0
            t_max_y = math.inf
            t_dy = math.inf

        rng_i = range_max
        while True:
            if t_max_x < t_max_y:
                t = t_max_x
                t_max_x += t_dx
                cx += step_x
            else:
                t = t_max_y
                t_max_y += t_dy
                cy += step_y
            if t > range_max:
                break
            if cx < 0 or cx >= w or cy < 0 or cy >= h:
                break
            if occ[cy, cx]:
                rng_i = t
                break
        out[i] = rng_i
    return out


@njit(cache=True)
def integrate_beams(logodds, cx0, cy0, end_cx, end_cy, is_hit,
                    l_free, l_occ, l_clamp, occ_lo):
    """Apply the inverse sensor model for one scan, in place.

    Per beam: every cell on the DDA line strictly before the endpoint gets
    l_free, the endpoint cell gets l_occ when the beam is a hit. Values are
    clamped to [-l_clamp, l_clamp] after each touch. Cells outside the grid
    truncate the beam. Returns True when any cell crossed the occupied
    threshold occ_lo (the cached distance field must then be rebuilt).
    """
    h, w = logodds.shape
    changed = False
    for b in range(end_cx.shape[0]):
        ex = end_cx[b]
        ey = end_cy[b]
        dx = ex - cx0
        dy = ey - cy0
        n = max(abs(dx), abs(dy))
        if n > 0:
            fx = dx / n
            fy = dy / n
            for k in range(n):
                x = int(math.floor(cx0 + fx * k + 0.5))
                y = int(math.floor(cy0 + fy * k + 0.5))
                if x < 0 or x >= w or y < 0 or y >= h:
                    break
                old = logodds[y, x]
                new = old + l_free
                if new < -l_clamp:
                    new = -l_clamp
                elif new > l_clamp:
                    new = l_clamp
                if (old > occ_lo) != (new > occ_lo):
                    changed = True
                logodds[y, x] = new
        if is_hit[b] and 0 <= ex < w and 0 <= ey < h:
            old = logodds[ey, ex]
            new = old + l_occ
            if new > l_clamp:
                new = l_clamp
            elif new < -l_clamp:
                new = -l_clamp
            if (old > occ_lo) != (new > occ_lo):
                changed = True
            logodds[ey, ex] = new
    return changed


@njit(cache=True)
def observation_counts(counts, cx0, cy0, end_cx, end_cy, is_hit):
    """Increment per-cell beam-observation counters along DDA lines.

    Same traversal as integrate_beams; used by the ground-truth auditor to
    know which cells were actually covered by sensor rays.
    """
    h, w = counts.shape
    for b in range(end_cx.shape[0]):
        ex = end_cx[b]
        ey = end_cy[b]
        dx = ex - cx0
        dy = ey - cy0
        n = max(abs(dx), abs(dy))
        if n > 0:
            fx = dx / n
            fy = dy / n
            for k in range(n):
                x = int(math.floor(cx0 + fx * k + 0.5))
                y = int(math.floor(cy0 + fy * k + 0.5))
                if x < 0 or x >= w or y < 0 or y >= h:
                    break
                counts[y, x] += 1
        if is_hit[b] and 0 <= ex < w and 0 <= ey < h:
            counts[ey, ex] += 1


@njit(cache=True)
def _sample_distance(dist, res, ox, oy, x, y):
    """Bilinear distance-field sample at a world point.

    Cell values live at cell centers; sampling between them keeps the
    likelihood smooth inside cells so hill climbing resolves sub-cell pose
    shifts. Returns -1.0 for points outside the grid.
    """
    h, w = dist.shape
    fx = (x - ox) / res - 0.5
    fy = (y - oy) / res - 0.5
    if fx < -0.5 or fy < -0.5 or fx > w - 0.5 or fy > h - 0.5:
        return -1.0
    if fx < 0.0:
        fx = 0.0
    elif fx > w - 1.0:
        fx = w - 1.0
    if fy < 0.0:
        fy = 0.0
    elif fy > h - 1.0:
        fy = h - 1.0
    x0 = int(math.floor(fx))
    y0 = int(math.floor(fy))
    if x0 > w - 2:
        x0 = w - 2 if w > 1 else 0
    if y0 > h - 2:
        y0 = h - 2 if h > 1 else 0
    tx = fx - x0
    ty = fy - y0
    x1 = x0 + 1 if w > 1 else x0
    y1 = y0 + 1 if h > 1 else y0
    d00 = dist[y0, x0]
    if d00 == math.inf:
        return d00  # field is all-inf when the map has no occupied cells
    d10 = dist[y0, x1]
    d01 = dist[y1, x0]
    d11 = dist[y1, x1]
    return ((1 - tx) * (1 - ty) * d00 + tx * (1 - ty) * d10
            + (1 - tx) * ty * d01 + tx * ty * d11)


@njit(cache=True)
def likelihood_score(dist, res, ox, oy, x, y, yaw, rel_x, rel_y,
                     sigma_hit, z_floor):
    """Likelihood-field log score of hit endpoints (rel_x/rel_y in body frame).

    dist holds the distance (meters) from each cell to the nearest occupied
    cell, sampled bilinearly at the endpoint; endpoints falling outside the
    grid score the floor term only.
    """
    c = math.cos(yaw)
    s = math.sin(yaw)
    coeff = 1.0 / (sigma_hit * math.sqrt(TWO_PI))
    inv_2s2 = 0.5 / (sigma_hit * sigma_hit)
    total = 0.0
    for i in range(rel_x.shape[0]):
        exw = x + c * rel_x[i] - s * rel_y[i]
        eyw = y + s * rel_x[i] + c * rel_y[i]
        d = _sample_distance(dist, res, ox, oy, exw, eyw)
        if d >= 0.0:
            p = coeff * math.exp(-d * d * inv_2s2) + z_floor
        else:
            p = z_floor
        total += math.log(p)
    return total


@njit(cache=True)
def likelihood_score_batch(dist, res, ox, oy, poses, rel_x, rel_y,
                           sigma_hit, z_floor):
    """likelihood_score evaluated for every row (x, y, yaw) of poses."""
    n = poses.shape[0]
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        out[i] = likelihood_score(dist, res, ox, oy,
                                  poses[i, 0], poses[i, 1], poses[i, 2],
                                  rel_x, rel_y, sigma_hit, z_floor)
    return out


@njit(cache=True)
def dwa_clearance(xs, ys, v_flat, obs, body, robot_radius, cap, dt_traj):
    """Per-pair distance-to-collision along the arc and min lateral clearance.

    xs/ys are (pairs, steps) trajectory samples, obs is (n, 2) obstacle
    points. dist_to_hit is the arc length covered before a sample comes
    within `body` of any point (inf when none does inside the horizon);
    min_clear is min point distance minus robot_radius, clipped to [0, cap].
    """
    n_pairs, n_steps = xs.shape
    n_obs = obs.shape[0]
    dist_to_hit = np.empty(n_pairs, dtype=np.float64)
    min_clear = np.empty(n_pairs, dtype=np.float64)
    body2 = body * body
    for p in range(n_pairs):
        hit_step = -1
        d2_min = np.inf
        for s in range(n_steps):
            x = xs[p, s]
            y = ys[p, s]
            for o in range(n_obs):
                dx = x - obs[o, 0]
                dy = y - obs[o, 1]
                d2 = dx * dx + dy * dy
                if d2 < d2_min:
                    d2_min = d2
                if d2 <= body2:
                    hit_step = s
                    break
            if hit_step >= 0:
                break
        if hit_step >= 0:
            dist_to_hit[p] = v_flat[p] * hit_step * dt_traj
        else:
            dist_to_hit[p] = np.inf
        c = math.sqrt(d2_min) - robot_radius
        if c < 0.0:
            c = 0.0
        elif c > cap:
            c = cap
        min_clear[p] = c
    return dist_to_hit, min_clear


@njit(cache=True)
def scan_match(dist, res, ox, oy, x0, y0, yaw0, rel_x, rel_y,
               sigma_hit, z_floor, lin_step, ang_step, halvings, max_sweeps,
               inv2var_xy, inv2var_yaw):
    """Greedy coordinate descent on likelihood field + Gaussian seed prior.

    Tries +/- moves on x, y, yaw; accepts strictly improving moves; halves the
    step sizes `halvings` times; max_sweeps bounds the inner loop per level.
    The prior (inv2var terms; pass 0 to disable) anchors the pose to the
    odometry seed so the cell-quantized likelihood plateau cannot walk the
    estimate around. Returns (x, y, yaw, best_objective); on a flat objective
    the seed is returned.
    """
    def objective(px, py, pyaw):
        lik = likelihood_score(dist, res, ox, oy, px, py, pyaw,
                               rel_x, rel_y, sigma_hit, z_floor)
        dx = px - x0
        dy = py - y0
        dyaw = pyaw - yaw0
        return lik - (dx * dx + dy * dy) * inv2var_xy - dyaw * dyaw * inv2var_yaw

    bx, by, byaw = x0, y0, yaw0
    best = objective(bx, by, byaw)
    ls = lin_step
    ang = ang_step
    for _ in range(halvings + 1):
        sweeps = 0
        improved = True
        while improved and sweeps < max_sweeps:
            improved = False
            sweeps += 1
            for m in range(6):
                nx, ny, nyaw = bx, by, byaw
                if m == 0:
                    nx += ls
                elif m == 1:
                    nx -= ls
                elif m == 2:
                    ny += ls
                elif m == 3:
                    ny -= ls
                elif m == 4:
                    nyaw += ang
                else:
                    nyaw -= ang
                sc = objective(nx, ny, nyaw)
                if sc > best:
                    best = sc
                    bx, by, byaw = nx, ny, nyaw
                    improved = True
        ls *= 0.5
        ang *= 0.5
    return bx, by, byaw, best
