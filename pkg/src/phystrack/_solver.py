"""Numba kernels shared by the simulator step and the batched parameter sweep.

The public step and the identification loop must produce bit-identical
physics for the same parameters, so both funnel through `step_particles`:
the step is the N=1 special case.  Candidate gap values arrive as the base
field's SDF samples; the per-particle geometry residual is subtracted
inside the kernel.

Velocity layout is u = [v_world (3), omega_body (3)].  A contact row is
(a, b) with a the world-frame direction and b the body-frame lever cross
product, so J u = a . v + b . omega.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def dedup_candidates(points, merge_dist):
    """Greedy duplicate merge over gap-ordered candidates (keep deepest)."""
    n = points.shape[0]
    keep = np.ones(n, np.bool_)
    md2 = merge_dist * merge_dist
    kept = np.empty(n, np.int64)
    nk = 0
    for i in range(n):
        ok = True
        for j in range(nk):
            k = kept[j]
            dx = points[i, 0] - points[k, 0]
            dy = points[i, 1] - points[k, 1]
            dz = points[i, 2] - points[k, 2]
            if dx * dx + dy * dy + dz * dz < md2:
                ok = False
                break
        if ok:
            kept[nk] = i
            nk += 1
        else:
            keep[i] = False
    return keep


@njit(cache=True)
def select_contacts(phi, n_active, pred, pred_order, points, entity,
                    max_contacts, bin_quantum, out_idx):
    """Pick solver contacts from the gap-sorted active prefix.

    Candidates are prioritized by their predicted end-of-step gap ``pred``
    (current gap plus linearized closing rate at the shared start velocity)
    so incoming surface regions are constrained before they tunnel, not only
    the already-deep ones.  When the active set exceeds ``max_contacts``,
    slots are split evenly across entities and filled per entity in
    predicted-depth bins, spreading equal-depth candidates by farthest-point
    selection so a resting patch stays covered instead of clustering.
    Everything is a function of ``n_active`` alone (residual shifts cancel),
    which lets callers cache the result across parameter particles.
    Returns the number selected; candidate indices, ascending, in out_idx.
    """
    if n_active == 0:
        return 0
    if n_active <= max_contacts:
        for i in range(n_active):
            out_idx[i] = i
        return n_active
    n_cand = phi.shape[0]
    # reference for depth bins: most urgent active candidate
    pred0 = 0.0
    found0 = False
    for j in range(n_cand):
        i = pred_order[j]
        if i < n_active:
            pred0 = pred[i]
            found0 = True
            break
    if not found0:
        return 0
    max_e = 0
    for i in range(n_active):
        if entity[i] > max_e:
            max_e = entity[i]
    present = np.zeros(max_e + 1, np.bool_)
    for i in range(n_active):
        present[entity[i]] = True
    n_ent = 0
    for e in range(max_e + 1):
        if present[e]:
            n_ent += 1
    quota = max_contacts // n_ent
    if quota < 1:
        quota = 1
    accepted = np.zeros(n_active, np.bool_)
    cand = np.empty(n_active, np.int64)
    acc_e = np.empty(max_contacts, np.int64)
    total = 0
    for e in range(max_e + 1):
        if not present[e] or total >= max_contacts:
            continue
        # this entity's active candidates in urgency order
        nc = 0
        for j in range(n_cand):
            i = pred_order[j]
            if i < n_active and entity[i] == e:
                cand[nc] = i
                nc += 1
        na = 0
        start = 0
        while start < nc and na < quota:
            b0 = int(np.floor((pred[cand[start]] - pred0) / bin_quantum))
            end = start
            while end < nc:
                b = int(np.floor((pred[cand[end]] - pred0) / bin_quantum))
                if b != b0:
                    break
                end += 1
            if na == 0:
                accepted[cand[start]] = True
                acc_e[0] = cand[start]
                na = 1
            while na < quota:
                best = -1
                best_d = -1.0
                for m in range(start, end):
                    i = cand[m]
                    if accepted[i]:
                        continue
                    dmin = 1e30
                    for j in range(na):
                        k = acc_e[j]
                        dx = points[i, 0] - points[k, 0]
                        dy = points[i, 1] - points[k, 1]
                        dz = points[i, 2] - points[k, 2]
                        d2 = dx * dx + dy * dy + dz * dz
                        if d2 < dmin:
                            dmin = d2
                    if dmin > best_d:
                        best_d = dmin
                        best = i
                if best < 0:
                    break
                accepted[best] = True
                acc_e[na] = best
                na += 1
            start = end
        total += na
    if total < max_contacts:
        for j in range(n_cand):
            if total >= max_contacts:
                break
            i = pred_order[j]
            if i < n_active and not accepted[i]:
                accepted[i] = True
                total += 1
    ns = 0
    for i in range(n_active):
        if accepted[i]:
            out_idx[ns] = i
            ns += 1
    return ns


@njit(cache=True)
def pgs_solve(an, bn, at, bt, ln, tt, inv_m, inv_ix, inv_iy, inv_iz, mu, u,
              tol, max_sweeps, lam, relax=1.0):
    """Projected Gauss-Seidel over contact rows.

    Normal impulses satisfy lam_n >= 0 and J_n u >= ln (allowed-approach
    lower bound); each tangent direction is clamped to +-mu*lam_n.  The
    relaxation factor damps the stick/slip limit cycle of redundant
    friction rows.  ``u`` and ``lam`` are updated in place; returns
    (sweeps, converged).
    """
    k = an.shape[0]
    npairs = at.shape[1]
    dn = np.empty(k)
    dt = np.empty((k, npairs))
    for i in range(k):
        dn[i] = (an[i, 0] * an[i, 0] + an[i, 1] * an[i, 1] + an[i, 2] * an[i, 2]) * inv_m \
            + bn[i, 0] * bn[i, 0] * inv_ix + bn[i, 1] * bn[i, 1] * inv_iy \
            + bn[i, 2] * bn[i, 2] * inv_iz
        for p in range(npairs):
            dt[i, p] = (at[i, p, 0] * at[i, p, 0] + at[i, p, 1] * at[i, p, 1]
                        + at[i, p, 2] * at[i, p, 2]) * inv_m \
                + bt[i, p, 0] * bt[i, p, 0] * inv_ix \
                + bt[i, p, 1] * bt[i, p, 1] * inv_iy \
                + bt[i, p, 2] * bt[i, p, 2] * inv_iz
    sweeps = 0
    converged = False
    for _s in range(max_sweeps):
        dmax = 0.0
        for i in range(k):
            v = an[i, 0] * u[0] + an[i, 1] * u[1] + an[i, 2] * u[2] \
                + bn[i, 0] * u[3] + bn[i, 1] * u[4] + bn[i, 2] * u[5]
            new = lam[i, 0] + relax * (ln[i] - v) / dn[i]
            if new < 0.0:
                new = 0.0
            d = new - lam[i, 0]
            if d != 0.0:
                lam[i, 0] = new
                u[0] += inv_m * d * an[i, 0]
                u[1] += inv_m * d * an[i, 1]
                u[2] += inv_m * d * an[i, 2]
                u[3] += inv_ix * d * bn[i, 0]
                u[4] += inv_iy * d * bn[i, 1]
                u[5] += inv_iz * d * bn[i, 2]
                ad = abs(d)
                if ad > dmax:
                    dmax = ad
            bound = mu * lam[i, 0]
            for p in range(npairs):
                v = at[i, p, 0] * u[0] + at[i, p, 1] * u[1] + at[i, p, 2] * u[2] \
                    + bt[i, p, 0] * u[3] + bt[i, p, 1] * u[4] + bt[i, p, 2] * u[5]
                new = lam[i, 1 + p] + relax * (tt[i, p] - v) / dt[i, p]
                if new > bound:
                    new = bound
                elif new < -bound:
                    new = -bound
                d = new - lam[i, 1 + p]
                if d != 0.0:
                    lam[i, 1 + p] = new
                    u[0] += inv_m * d * at[i, p, 0]
                    u[1] += inv_m * d * at[i, p, 1]
                    u[2] += inv_m * d * at[i, p, 2]
                    u[3] += inv_ix * d * bt[i, p, 0]
                    u[4] += inv_iy * d * bt[i, p, 1]
                    u[5] += inv_iz * d * bt[i, p, 2]
                    ad = abs(d)
                    if ad > dmax:
                        dmax = ad
        sweeps = _s + 1
        if dmax < tol:
            converged = True
            break
    return sweeps, converged


@njit(cache=True)
def _integrate(px, py, pz, qw, qx, qy, qz, u, h, out_pos, out_quat, row):
    out_pos[row, 0] = px + h * u[0]
    out_pos[row, 1] = py + h * u[1]
    out_pos[row, 2] = pz + h * u[2]
    rx = h * u[3]
    ry = h * u[4]
    rz = h * u[5]
    ang = np.sqrt(rx * rx + ry * ry + rz * rz)
    if ang < 1e-12:
        ew = 1.0 - ang * ang / 8.0
        f = 0.5 - ang * ang / 48.0
    else:
        ew = np.cos(0.5 * ang)
        f = np.sin(0.5 * ang) / ang
    ex = f * rx
    ey = f * ry
    ez = f * rz
    nw = qw * ew - qx * ex - qy * ey - qz * ez
    nx = qw * ex + qx * ew + qy * ez - qz * ey
    ny = qw * ey - qx * ez + qy * ew + qz * ex
    nz = qw * ez + qx * ey - qy * ex + qz * ew
    norm = np.sqrt(nw * nw + nx * nx + ny * ny + nz * nz)
    nw /= norm
    nx /= norm
    ny /= norm
    nz /= norm
    flip = False
    if nw < 0.0:
        flip = True
    elif nw == 0.0:
        if nx < 0.0:
            flip = True
        elif nx == 0.0:
            if ny < 0.0:
                flip = True
            elif ny == 0.0 and nz < 0.0:
                flip = True
    if flip:
        nw = -nw
        nx = -nx
        ny = -ny
        nz = -nz
    out_quat[row, 0] = nw
    out_quat[row, 1] = nx
    out_quat[row, 2] = ny
    out_quat[row, 3] = nz


@njit(cache=True)
def step_particles(pos, quat, vlin, wbody, h, gravity, u_force, u_torque,
                   phi, points, an, bn, at, bt, nvel, tvel, entity,
                   pred, pred_order,
                   margin_eff, max_contacts, bin_quantum, tol, max_sweeps,
                   relax, mass, inertia, mu, delta, order,
                   out_pos, out_quat, out_vlin, out_wbody,
                   out_nsel, out_sel, out_lam, out_sweeps, out_conv):
    """Advance one semi-implicit Euler contact step for N parameter sets.

    Shared inputs describe a single start state and its contact candidates
    (gap-sorted base SDF values); per-particle arrays carry mass, diagonal
    inertia, friction, and geometry residual.  ``order`` lists particle
    indices sorted by residual so the contact selection cache stays warm.
    """
    n_particles = mass.shape[0]
    n_cand = phi.shape[0]
    npairs = at.shape[1]
    sel = np.empty(max_contacts, np.int64)
    san = np.empty((max_contacts, 3))
    sbn = np.empty((max_contacts, 3))
    sat = np.empty((max_contacts, npairs, 3))
    sbt = np.empty((max_contacts, npairs, 3))
    sln = np.empty(max_contacts)
    stt = np.empty((max_contacts, npairs))
    u = np.empty(6)
    last_active = -1
    n_sel = 0
    for row in range(n_particles):
        p = order[row]
        m = mass[p]
        inv_m = 1.0 / m
        inv_ix = 1.0 / inertia[p, 0]
        inv_iy = 1.0 / inertia[p, 1]
        inv_iz = 1.0 / inertia[p, 2]
        d = delta[p]
        # free velocity: gravity, applied wrench, explicit gyroscopic torque
        u[0] = vlin[0] + h * (gravity[0] + u_force[0] * inv_m)
        u[1] = vlin[1] + h * (gravity[1] + u_force[1] * inv_m)
        u[2] = vlin[2] + h * (gravity[2] + u_force[2] * inv_m)
        iw_x = inertia[p, 0] * wbody[0]
        iw_y = inertia[p, 1] * wbody[1]
        iw_z = inertia[p, 2] * wbody[2]
        gyro_x = -(wbody[1] * iw_z - wbody[2] * iw_y)
        gyro_y = -(wbody[2] * iw_x - wbody[0] * iw_z)
        gyro_z = -(wbody[0] * iw_y - wbody[1] * iw_x)
        u[3] = wbody[0] + h * inv_ix * (gyro_x + u_torque[0])
        u[4] = wbody[1] + h * inv_iy * (gyro_y + u_torque[1])
        u[5] = wbody[2] + h * inv_iz * (gyro_z + u_torque[2])

        n_active = 0
        for i in range(n_cand):
            if phi[i] - d < margin_eff:
                n_active += 1
            else:
                break
        if n_active != last_active:
            n_sel = select_contacts(phi, n_active, pred, pred_order, points,
                                    entity, max_contacts, bin_quantum, sel)
            last_active = n_active
        out_nsel[p] = n_sel
        sweeps = 0
        conv = True
        if n_sel > 0:
            for i in range(n_sel):
                c = sel[i]
                gap = phi[c] - d
                allowed = gap / h
                if allowed < 0.0:
                    allowed = 0.0
                sln[i] = nvel[c] - allowed
                for ax in range(3):
                    san[i, ax] = an[c, ax]
                    sbn[i, ax] = bn[c, ax]
                for q in range(npairs):
                    stt[i, q] = tvel[c, q]
                    for ax in range(3):
                        sat[i, q, ax] = at[c, q, ax]
                        sbt[i, q, ax] = bt[c, q, ax]
            lam = out_lam[p, :n_sel, :]
            lam[:] = 0.0
            sweeps, conv = pgs_solve(san[:n_sel], sbn[:n_sel], sat[:n_sel],
                                     sbt[:n_sel], sln[:n_sel], stt[:n_sel],
                                     inv_m, inv_ix, inv_iy, inv_iz, mu[p], u,
                                     tol, max_sweeps, lam, relax)
            for i in range(n_sel):
                out_sel[p, i] = sel[i]
        out_sweeps[p] = sweeps
        out_conv[p] = conv
        out_vlin[p, 0] = u[0]
        out_vlin[p, 1] = u[1]
        out_vlin[p, 2] = u[2]
        out_wbody[p, 0] = u[3]
        out_wbody[p, 1] = u[4]
        out_wbody[p, 2] = u[5]
        _integrate(pos[0], pos[1], pos[2], quat[0], quat[1], quat[2], quat[3],
                   u, h, out_pos, out_quat, p)
