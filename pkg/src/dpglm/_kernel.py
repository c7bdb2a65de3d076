"""Compiled inner loop for fully conjugate linear-Gaussian models.

The label sweep dominates chain runtime, so it runs as a numba kernel over
flat per-cluster-slot arrays (counts, per-dimension moments, level counts,
and response cross-products).  The surrounding driver keeps the public
:class:`GibbsState` view in sync: slots are mapped to monotonically
increasing cluster ids in birth order, parameters are refreshed with the
same exact posterior draws as the generic path, and statistics are rebuilt
from scratch periodically to cancel incremental float drift.

The kernel consumes exactly one uniform from the chain's generator per
datum, drawn from the same stream the Python side uses.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from . import base_measures as bm
from .core import ClusterEntry, ClusterParams, GaussianDim

_RESYNC_EVERY = 2000


@njit(cache=True)
def _option_logweight(slot, i, x, design, y, counts,
                      cont_sum, cont_ssq, lvl_counts, lvl_offset,
                      dim_is_gauss, S, t, q,
                      a, b, lam, nu, conc, conc_tot,
                      Vinv, Vinv_m0, m0Vm0, ay, by,
                      gtab_cov, gtab_resp, cholbuf, uvec, vvec):
    """Collapsed log density of datum i under cluster ``slot`` (members
    exclude i), covariate factors plus the response factor."""
    d = x.shape[1]
    p = design.shape[1]
    m = counts[slot]
    lw = 0.0
    for j in range(d):
        if dim_is_gauss[j]:
            nun = nu[j] + m
            lamn = (nu[j] * lam[j] + cont_sum[slot, j]) / nun
            an = a[j] + 0.5 * m
            bn = b[j] + 0.5 * (cont_ssq[slot, j] + nu[j] * lam[j] * lam[j]
                               - nun * lamn * lamn)
            if bn < 1e-300:
                bn = 1e-300
            df = 2.0 * an
            sc2 = bn * (nun + 1.0) / (an * nun)
            z2 = (x[i, j] - lamn) ** 2 / sc2
            lw += (gtab_cov[j, m] - 0.5 * math.log(df * math.pi * sc2)
                   - 0.5 * (df + 1.0) * math.log1p(z2 / df))
        else:
            off = lvl_offset[j]
            lev = int(x[i, j])
            lw += math.log((conc[off + lev] + lvl_counts[slot, off + lev])
                           / (conc_tot[j] + m))
    # response: Student-t predictive from the regression cross-products
    for r in range(p):
        for c in range(r + 1):
            acc = Vinv[r, c] + S[slot, r, c]
            for k in range(c):
                acc -= cholbuf[r, k] * cholbuf[c, k]
            if r == c:
                cholbuf[r, r] = math.sqrt(acc)
            else:
                cholbuf[r, c] = acc / cholbuf[c, c]
    for r in range(p):
        acc = Vinv_m0[r] + t[slot, r]
        for k in range(r):
            acc -= cholbuf[r, k] * uvec[k]
        uvec[r] = acc / cholbuf[r, r]
    for r in range(p):
        acc = design[i, r]
        for k in range(r):
            acc -= cholbuf[r, k] * vvec[k]
        vvec[r] = acc / cholbuf[r, r]
    utu = 0.0
    h = 0.0
    loc = 0.0
    for r in range(p):
        utu += uvec[r] * uvec[r]
        h += vvec[r] * vvec[r]
        loc += vvec[r] * uvec[r]
    an = ay + 0.5 * m
    bn = by + 0.5 * (m0Vm0 + q[slot] - utu)
    if bn < 1e-300:
        bn = 1e-300
    df = 2.0 * an
    sc2 = (bn / an) * (1.0 + h)
    z2 = (y[i] - loc) ** 2 / sc2
    lw += (gtab_resp[m] - 0.5 * math.log(df * math.pi * sc2)
           - 0.5 * (df + 1.0) * math.log1p(z2 / df))
    return lw


@njit(cache=True)
def _stats_update(slot, i, sign, x, design, y, counts, cont_sum, cont_ssq,
                  lvl_counts, lvl_offset, dim_is_gauss, S, t, q):
    d = x.shape[1]
    p = design.shape[1]
    counts[slot] += 1 if sign > 0 else -1
    for j in range(d):
        if dim_is_gauss[j]:
            cont_sum[slot, j] += sign * x[i, j]
            cont_ssq[slot, j] += sign * x[i, j] * x[i, j]
        else:
            lvl_counts[slot, lvl_offset[j] + int(x[i, j])] += sign
    for r in range(p):
        t[slot, r] += sign * design[i, r] * y[i]
        for c in range(p):
            S[slot, r, c] += sign * design[i, r] * design[i, c]
    q[slot] += sign * y[i] * y[i]


@njit(cache=True)
def _sweep(gen, x, design, y, slot_labels, counts, alive, order, meta,
           free_slots, birth_slots,
           cont_sum, cont_ssq, lvl_counts, lvl_offset, dim_is_gauss,
           S, t, q, a, b, lam, nu, conc, conc_tot,
           Vinv, Vinv_m0, m0Vm0, ay, by, alpha,
           gtab_cov, gtab_resp, newopt, cholbuf, uvec, vvec, wbuf):
    """One collapsed label sweep in index order.

    meta = [n_alive, n_births, n_free]; birth_slots records fresh slots in
    creation order so the driver can hand out monotone cluster ids.
    """
    n = x.shape[0]
    meta[1] = 0
    for i in range(n):
        slot = slot_labels[i]
        _stats_update(slot, i, -1.0, x, design, y, counts, cont_sum, cont_ssq,
                      lvl_counts, lvl_offset, dim_is_gauss, S, t, q)
        if counts[slot] == 0:
            alive[slot] = False
            # drop from the order array, keeping cid order
            pos = 0
            for k in range(meta[0]):
                if order[k] == slot:
                    pos = k
                    break
            for k in range(pos, meta[0] - 1):
                order[k] = order[k + 1]
            meta[0] -= 1
            free_slots[meta[2]] = slot
            meta[2] += 1
            # zero the dead slot's statistics so reuse starts clean
            for j in range(x.shape[1]):
                cont_sum[slot, j] = 0.0
                cont_ssq[slot, j] = 0.0
            for L in range(lvl_counts.shape[1]):
                lvl_counts[slot, L] = 0.0
            for r in range(design.shape[1]):
                t[slot, r] = 0.0
                for c in range(design.shape[1]):
                    S[slot, r, c] = 0.0
            q[slot] = 0.0

        denom = math.log(n - 1.0 + alpha)
        n_alive = meta[0]
        wmax = -1.0e308
        for k in range(n_alive):
            s2 = order[k]
            lw = math.log(float(counts[s2])) - denom
            lw += _option_logweight(s2, i, x, design, y, counts,
                                    cont_sum, cont_ssq, lvl_counts, lvl_offset,
                                    dim_is_gauss, S, t, q, a, b, lam, nu,
                                    conc, conc_tot, Vinv, Vinv_m0, m0Vm0,
                                    ay, by, gtab_cov, gtab_resp,
                                    cholbuf, uvec, vvec)
            wbuf[k] = lw
            if lw > wmax:
                wmax = lw
        lw_new = math.log(alpha) - denom + newopt[i]
        wbuf[n_alive] = lw_new
        if lw_new > wmax:
            wmax = lw_new

        tot = 0.0
        for k in range(n_alive + 1):
            wbuf[k] = math.exp(wbuf[k] - wmax)
            tot += wbuf[k]
        u = gen.random() * tot
        acc = 0.0
        pick = n_alive
        for k in range(n_alive + 1):
            acc += wbuf[k]
            if u <= acc:
                pick = k
                break

        if pick == n_alive:
            meta[2] -= 1
            slot2 = free_slots[meta[2]]
            alive[slot2] = True
            order[meta[0]] = slot2
            meta[0] += 1
            birth_slots[meta[1]] = slot2
            meta[1] += 1
        else:
            slot2 = order[pick]
        slot_labels[i] = slot2
        _stats_update(slot2, i, 1.0, x, design, y, counts, cont_sum, cont_ssq,
                      lvl_counts, lvl_offset, dim_is_gauss, S, t, q)


class CollapsedGaussianDriver:
    """Array-backed collapsed sampler for one chain, kept in lock-step with
    a :class:`GibbsState`."""

    def __init__(self, state, data, ws):
        self.state = state
        self.data = data
        self.ws = ws
        base = ws.base
        n = data.n
        d = data.d
        p = ws.layout.p
        self.n = n
        self.p = p
        cap = n + 2

        self.x = np.ascontiguousarray(data.rows, dtype=np.float64)
        self.design = np.ascontiguousarray(ws.design, dtype=np.float64)
        self.y = np.ascontiguousarray(ws.y, dtype=np.float64)

        self.dim_is_gauss = np.array(
            [isinstance(part, bm.NIG) for part in base.covariate_parts], dtype=np.bool_)
        self.a = np.zeros(d)
        self.b = np.zeros(d)
        self.lam = np.zeros(d)
        self.nu = np.ones(d)
        offsets = np.full(d, -1, dtype=np.int64)
        conc_list = []
        conc_tot = np.zeros(d)
        off = 0
        for j, part in enumerate(base.covariate_parts):
            if isinstance(part, bm.NIG):
                self.a[j], self.b[j] = part.a, part.b
                self.lam[j], self.nu[j] = part.lam, part.nu
            else:
                offsets[j] = off
                conc_list.extend(part.concentration)
                conc_tot[j] = part.total
                off += len(part.concentration)
        self.lvl_offset = offsets
        self.conc = np.asarray(conc_list, dtype=np.float64) if conc_list else np.zeros(1)
        self.conc_tot = conc_tot
        self.total_levels = max(off, 1)

        rp = base.response_part
        self.Vinv = np.ascontiguousarray(rp.Vinv)
        self.Vinv_m0 = np.ascontiguousarray(rp.Vinv_m0)
        self.m0Vm0 = rp.m0Vinvm0
        self.ay, self.by = rp.shape, rp.scale

        self.gtab_cov = np.zeros((d, n + 1))
        for j in range(d):
            if self.dim_is_gauss[j]:
                for m in range(n + 1):
                    an = self.a[j] + 0.5 * m
                    self.gtab_cov[j, m] = math.lgamma(an + 0.5) - math.lgamma(an)
        self.gtab_resp = np.array(
            [math.lgamma(self.ay + 0.5 * m + 0.5) - math.lgamma(self.ay + 0.5 * m)
             for m in range(n + 1)])

        # new-cluster option: prior predictive of the full datum, fixed per chain
        empty = ws.empty_stats()
        self.newopt = np.array(
            [bm.covariate_posterior_predictive_logdensity(base, empty, self.x[i])
             + bm.response_posterior_predictive_logdensity(base, empty,
                                                           self.design[i], self.y[i])
             for i in range(n)])

        # slot arrays
        self.counts = np.zeros(cap, dtype=np.int64)
        self.alive = np.zeros(cap, dtype=np.bool_)
        self.order = np.zeros(cap, dtype=np.int64)
        self.meta = np.zeros(3, dtype=np.int64)
        self.free_slots = np.zeros(cap, dtype=np.int64)
        self.birth_slots = np.zeros(n, dtype=np.int64)
        self.cont_sum = np.zeros((cap, d))
        self.cont_ssq = np.zeros((cap, d))
        self.lvl_counts = np.zeros((cap, self.total_levels))
        self.S = np.zeros((cap, p, p))
        self.t = np.zeros((cap, p))
        self.q = np.zeros(cap)
        self.slot_labels = np.zeros(n, dtype=np.int64)
        self.slot_to_cid = np.full(cap, -1, dtype=np.int64)

        self.cholbuf = np.zeros((p, p))
        self.uvec = np.zeros(p)
        self.vvec = np.zeros(p)
        self.wbuf = np.zeros(cap + 1)

        self._load_from_state()
        self._sweeps_since_resync = 0

    # -- state <-> arrays ---------------------------------------------------

    def _load_from_state(self):
        state = self.state
        cids = sorted(state.clusters)
        cid_to_slot = {}
        self.alive[:] = False
        self.slot_to_cid[:] = -1
        for k, cid in enumerate(cids):
            cid_to_slot[cid] = k
            self.slot_to_cid[k] = cid
            self.order[k] = k
            self.alive[k] = True
        self.meta[0] = len(cids)
        free = [s for s in range(len(self.counts)) if not self.alive[s]]
        self.free_slots[:len(free)] = np.asarray(free, dtype=np.int64)
        self.meta[2] = len(free)
        for i in range(self.n):
            self.slot_labels[i] = cid_to_slot[int(state.labels[i])]
        self._rebuild_stats()

    def _rebuild_stats(self):
        self.counts[:] = 0
        self.cont_sum[:] = 0.0
        self.cont_ssq[:] = 0.0
        self.lvl_counts[:] = 0.0
        self.S[:] = 0.0
        self.t[:] = 0.0
        self.q[:] = 0.0
        for i in range(self.n):
            _stats_update(self.slot_labels[i], i, 1.0, self.x, self.design, self.y,
                          self.counts, self.cont_sum, self.cont_ssq,
                          self.lvl_counts, self.lvl_offset, self.dim_is_gauss,
                          self.S, self.t, self.q)

    def sweep(self, rng):
        """One label sweep plus exact parameter refreshes."""
        _sweep(rng, self.x, self.design, self.y, self.slot_labels, self.counts,
               self.alive, self.order, self.meta, self.free_slots, self.birth_slots,
               self.cont_sum, self.cont_ssq, self.lvl_counts, self.lvl_offset,
               self.dim_is_gauss, self.S, self.t, self.q, self.a, self.b,
               self.lam, self.nu, self.conc, self.conc_tot, self.Vinv,
               self.Vinv_m0, self.m0Vm0, self.ay, self.by, self.state.alpha,
               self.gtab_cov, self.gtab_resp, self.newopt, self.cholbuf,
               self.uvec, self.vvec, self.wbuf)
        state = self.state
        for k in range(self.meta[1]):
            slot = self.birth_slots[k]
            if self.alive[slot] and self.slot_to_cid[slot] < 0:
                self.slot_to_cid[slot] = state.next_cluster_id
            state.next_cluster_id += 1
        for s in range(len(self.alive)):
            if not self.alive[s]:
                self.slot_to_cid[s] = -1
        self._refresh_params(rng)
        self._sweeps_since_resync += 1
        if self._sweeps_since_resync >= _RESYNC_EVERY:
            self._rebuild_stats()
            self._sweeps_since_resync = 0

    def _refresh_params(self, rng):
        base = self.ws.base
        self._params = {}
        slots = sorted((self.slot_to_cid[s], s)
                       for s in range(len(self.alive)) if self.alive[s])
        for cid, slot in slots:
            theta_x = []
            for j, part in enumerate(base.covariate_parts):
                if isinstance(part, bm.NIG):
                    theta_x.append(bm.sample_nig_posterior(
                        part, int(self.counts[slot]), self.cont_sum[slot, j],
                        self.cont_ssq[slot, j], rng))
                else:
                    off = self.lvl_offset[j]
                    K = len(part.concentration)
                    counts = self.lvl_counts[slot, off:off + K]
                    theta_x.append(rng.dirichlet(np.asarray(part.concentration)
                                                 + counts))
            theta_y = bm.sample_mvnig_posterior_raw(
                base.response_part, int(self.counts[slot]), self.S[slot],
                self.t[slot], self.q[slot], rng)
            self._params[slot] = ClusterParams(theta_x, theta_y)

    def sync_state(self):
        """Materialize labels/clusters onto the owning GibbsState."""
        state = self.state
        state.labels = self.slot_to_cid[self.slot_labels].copy()
        clusters = {}
        for s in range(len(self.alive)):
            if self.alive[s]:
                clusters[int(self.slot_to_cid[s])] = ClusterEntry(
                    self._params[s], int(self.counts[s]))
        state.clusters = dict(sorted(clusters.items()))

    # -- test hook -----------------------------------------------------------

    def datum_logweights(self, i):
        """Log weights (existing clusters in cid order, then the fresh
        option) for datum i with i held out; mirrors the sweep's math."""
        slot = self.slot_labels[i]
        _stats_update(slot, i, -1.0, self.x, self.design, self.y, self.counts,
                      self.cont_sum, self.cont_ssq, self.lvl_counts,
                      self.lvl_offset, self.dim_is_gauss, self.S, self.t, self.q)
        n = self.n
        denom = math.log(n - 1.0 + self.state.alpha)
        out = []
        for k in range(self.meta[0]):
            s2 = self.order[k]
            if self.counts[s2] == 0:
                continue
            lw = math.log(float(self.counts[s2])) - denom
            lw += _option_logweight(s2, i, self.x, self.design, self.y, self.counts,
                                    self.cont_sum, self.cont_ssq, self.lvl_counts,
                                    self.lvl_offset, self.dim_is_gauss, self.S,
                                    self.t, self.q, self.a, self.b, self.lam,
                                    self.nu, self.conc, self.conc_tot, self.Vinv,
                                    self.Vinv_m0, self.m0Vm0, self.ay, self.by,
                                    self.gtab_cov, self.gtab_resp, self.cholbuf,
                                    self.uvec, self.vvec)
            out.append(lw)
        out.append(math.log(self.state.alpha) - denom + self.newopt[i])
        _stats_update(slot, i, 1.0, self.x, self.design, self.y, self.counts,
                      self.cont_sum, self.cont_ssq, self.lvl_counts,
                      self.lvl_offset, self.dim_is_gauss, self.S, self.t, self.q)
        return np.array(out)
