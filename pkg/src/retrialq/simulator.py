"""Discrete-event simulation of the model: the statistical oracle.

Simulates the exact call-level semantics -- MAP arrivals, per-call PH
service phases, PH retrial clocks with abandonment and attempts, per-busy-
channel failures and per-failed-channel repairs -- under the same admission
policy the generator uses (a retrial succeeds only when a new call would be
admitted; arrivals finding every idle channel failed are lost).  All clocks
are exponential given the phase, so each step samples one competing event
from the total rate.  No orbit truncation is applied.

Replications use independent, documented random streams
(SeedSequence(seed).spawn), so results are bit-identical for a fixed
(model, horizon, warmup, replications, seed) regardless of worker count.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .stochastic import MapProcess, ModelParams

SIM_MEASURES = ("EB", "ER", "EN", "P_d", "P_b", "P_c_avail", "lambda_H_out", "theta_r_succ")


@dataclass
class SimEstimates:
    estimates: dict[str, float]
    half_widths: dict[str, float]
    per_replication: dict[str, np.ndarray]
    replications: int
    horizon: float
    warmup: float

    def interval(self, name: str) -> tuple[float, float]:
        m, h = self.estimates[name], self.half_widths[name]
        return m - h, m + h

    def covers(self, name: str, value: float) -> bool:
        lo, hi = self.interval(name)
        return lo <= value <= hi


class _EventTable:
    """Cumulative outcome tables for one phase family."""

    def __init__(self, subgen: np.ndarray, exits: list[tuple[np.ndarray, int]]):
        # outcome codes: >= 0 phase move target, negatives from the exits list
        self.rate = -np.diag(subgen)
        self.cum = []
        self.codes = []
        W = subgen.shape[0]
        for w in range(W):
            rates, codes = [], []
            for w2 in range(W):
                if w2 != w and subgen[w, w2] > 0:
                    rates.append(subgen[w, w2])
                    codes.append(w2)
            for vec, code in exits:
                if vec[w] > 0:
                    rates.append(vec[w])
                    codes.append(code)
            self.cum.append(np.cumsum(rates))
            self.codes.append(codes)

    def draw(self, w: int, u: float) -> int:
        cum = self.cum[w]
        k = int(np.searchsorted(cum, u * cum[-1], side="right"))
        if k >= len(self.codes[w]):
            k = len(self.codes[w]) - 1
        return self.codes[w][k]


def _init_sampler(vec: np.ndarray):
    cum = np.cumsum(vec)
    cum /= cum[-1]

    def draw(u: float) -> int:
        return int(np.searchsorted(cum, u, side="right"))

    return draw


COMPLETE = -1
ABANDON = -2
ATTEMPT = -3


def _map_tables(m: MapProcess):
    """Per MAP phase: total event rate and cumulative (target, kind) table."""
    L = m.dimension
    rate = np.zeros(L)
    cum, targets, kinds = [], [], []
    for v in range(L):
        rates, tg, kd = [], [], []
        for v2 in range(L):
            if v2 != v and m.c0[v, v2] > 0:
                rates.append(m.c0[v, v2]); tg.append(v2); kd.append(0)
            if m.c_h[v, v2] > 0:
                rates.append(m.c_h[v, v2]); tg.append(v2); kd.append(1)
            if m.c_n[v, v2] > 0:
                rates.append(m.c_n[v, v2]); tg.append(v2); kd.append(2)
        rate[v] = float(np.sum(rates))
        cum.append(np.cumsum(rates))
        targets.append(tg)
        kinds.append(kd)
    return rate, cum, targets, kinds


def _replication(model: ModelParams, horizon: float, warmup: float,
                 seed_entropy, trace=None) -> dict[str, float]:
    rng = np.random.default_rng(np.random.PCG64(seed_entropy))
    S, G = model.servers, model.guard
    lam_f, mu_r = model.failure_rate, model.repair_rate
    svc_n = _EventTable(model.service_new.subgen, [(model.service_new.exit1, COMPLETE)])
    svc_h = _EventTable(model.service_handoff.subgen, [(model.service_handoff.exit1, COMPLETE)])
    ret = _EventTable(model.retrial.subgen,
                      [(model.retrial.exit1, ABANDON), (model.retrial.exit2, ATTEMPT)])
    draw_dn = _init_sampler(model.service_new.init)
    draw_dh = _init_sampler(model.service_handoff.init)
    draw_g = _init_sampler(model.retrial.init)
    map_rate, map_cum, map_tg, map_kind = _map_tables(model.arrivals)

    pi_cum = np.cumsum(model.arrivals.pi)
    v = int(np.searchsorted(pi_cum / pi_cum[-1], rng.random(), side="right"))
    new_calls: list[int] = []
    h_calls: list[int] = []
    orbit: list[int] = []
    failed = 0
    s_new = s_h = s_orb = 0.0

    t = 0.0
    area_busy = area_orbit = area_failed = area_avail = 0.0
    arr_h = arr_n = dropped = blocked = 0
    completions_h = successes = 0
    resync = 0

    def admit_new_ok():
        return len(new_calls) + len(h_calls) < S - G and len(new_calls) + len(h_calls) + failed < S

    while True:
        busy = len(new_calls) + len(h_calls)
        assert busy + failed <= S and len(new_calls) <= min(busy, S - G)
        total = map_rate[v] + s_new + s_h + s_orb + busy * lam_f + failed * mu_r
        if total <= 0.0:
            seg = horizon - t
            if seg > 0 and horizon > warmup:
                eff = horizon - max(t, warmup)
                area_busy += busy * eff
                area_orbit += len(orbit) * eff
                area_failed += failed * eff
                area_avail += eff if busy >= 1 else 0.0
            break
        dt = -np.log(1.0 - rng.random()) / total
        t_next = t + dt
        seg_end = min(t_next, horizon)
        if seg_end > warmup:
            eff = seg_end - max(t, warmup)
            area_busy += busy * eff
            area_orbit += len(orbit) * eff
            area_failed += failed * eff
            area_avail += eff if busy >= 1 else 0.0
        t = t_next
        if t >= horizon:
            break
        count = t >= warmup

        resync += 1
        if resync >= 65536:
            # running sums drift slowly; refresh from the call lists
            s_new = float(np.sum(svc_n.rate[new_calls])) if new_calls else 0.0
            s_h = float(np.sum(svc_h.rate[h_calls])) if h_calls else 0.0
            s_orb = float(np.sum(ret.rate[orbit])) if orbit else 0.0
            resync = 0

        u = rng.random() * total
        if u < map_rate[v]:
            cum = map_cum[v]
            k = int(np.searchsorted(cum, u, side="right"))
            if k >= len(map_tg[v]):
                k = len(map_tg[v]) - 1
            kind = map_kind[v][k]
            v = map_tg[v][k]
            if kind == 1:  # handoff arrival
                if count:
                    arr_h += 1
                if busy + failed < S:
                    w = draw_dh(rng.random())
                    h_calls.append(w)
                    s_h += svc_h.rate[w]
                elif count:
                    dropped += 1
            elif kind == 2:  # new arrival
                if count:
                    arr_n += 1
                if admit_new_ok():
                    w = draw_dn(rng.random())
                    new_calls.append(w)
                    s_new += svc_n.rate[w]
                else:
                    if count:
                        blocked += 1
                    if busy + failed < S or failed == 0:
                        w = draw_g(rng.random())
                        orbit.append(w)
                        s_orb += ret.rate[w]
                    # else: every idle channel failed -> call lost outright
            if trace:
                trace.write(f"{t:.6f} map {len(new_calls) + len(h_calls)} "
                            f"{len(new_calls)} {failed} {len(orbit)}\n")
            continue
        u -= map_rate[v]
        if u < s_new:
            k, u2 = _pick(new_calls, svc_n.rate, u)
            out = svc_n.draw(new_calls[k], u2)
            if out == COMPLETE:
                s_new -= svc_n.rate[new_calls[k]]
                new_calls.pop(k)
            else:
                s_new += svc_n.rate[out] - svc_n.rate[new_calls[k]]
                new_calls[k] = out
            if trace:
                trace.write(f"{t:.6f} svcN {len(new_calls)+len(h_calls)} {len(new_calls)} {failed} {len(orbit)}\n")
            continue
        u -= s_new
        if u < s_h:
            k, u2 = _pick(h_calls, svc_h.rate, u)
            out = svc_h.draw(h_calls[k], u2)
            if out == COMPLETE:
                s_h -= svc_h.rate[h_calls[k]]
                h_calls.pop(k)
                if count:
                    completions_h += 1
            else:
                s_h += svc_h.rate[out] - svc_h.rate[h_calls[k]]
                h_calls[k] = out
            if trace:
                trace.write(f"{t:.6f} svcH {len(new_calls)+len(h_calls)} {len(new_calls)} {failed} {len(orbit)}\n")
            continue
        u -= s_h
        if u < s_orb:
            k, u2 = _pick(orbit, ret.rate, u)
            out = ret.draw(orbit[k], u2)
            if out == ABANDON:
                s_orb -= ret.rate[orbit[k]]
                orbit.pop(k)
            elif out == ATTEMPT:
                if admit_new_ok():
                    s_orb -= ret.rate[orbit[k]]
                    orbit.pop(k)
                    w = draw_dn(rng.random())
                    new_calls.append(w)
                    s_new += svc_n.rate[w]
                    if count:
                        successes += 1
                else:
                    w = draw_g(rng.random())
                    s_orb += ret.rate[w] - ret.rate[orbit[k]]
                    orbit[k] = w
            else:
                s_orb += ret.rate[out] - ret.rate[orbit[k]]
                orbit[k] = out
            if trace:
                trace.write(f"{t:.6f} retrial {len(new_calls)+len(h_calls)} {len(new_calls)} {failed} {len(orbit)}\n")
            continue
        u -= s_orb
        if u < busy * lam_f:
            k = int(u / lam_f) if lam_f > 0 else 0
            if k >= busy:
                k = busy - 1
            if k < len(new_calls):
                s_new -= svc_n.rate[new_calls[k]]
                new_calls.pop(k)
            else:
                s_h -= svc_h.rate[h_calls[k - len(new_calls)]]
                h_calls.pop(k - len(new_calls))
            failed += 1
            if trace:
                trace.write(f"{t:.6f} failure {len(new_calls)+len(h_calls)} {len(new_calls)} {failed} {len(orbit)}\n")
            continue
        # repair
        failed -= 1
        if trace:
            trace.write(f"{t:.6f} repair {len(new_calls)+len(h_calls)} {len(new_calls)} {failed} {len(orbit)}\n")

    t_eff = horizon - warmup
    return {
        "EB": area_busy / t_eff,
        "ER": area_orbit / t_eff,
        "EN": area_failed / t_eff,
        "P_d": dropped / arr_h if arr_h else 0.0,
        "P_b": blocked / arr_n if arr_n else 0.0,
        "P_c_avail": area_avail / t_eff,
        "lambda_H_out": completions_h / t_eff,
        "theta_r_succ": successes / t_eff,
    }


def _pick(calls: list[int], rates: np.ndarray, u: float) -> tuple[int, float]:
    """Pick the call whose cumulative rate bracket contains u; returns the
    index and the position of u within that call's bracket, rescaled to
    [0, 1) for the outcome draw."""
    acc = 0.0
    for k, w in enumerate(calls):
        r = rates[w]
        if u < acc + r:
            return k, (u - acc) / r
        acc += r
    return len(calls) - 1, 0.5


def _rep_job(args):
    model, horizon, warmup, entropy = args
    return _replication(model, horizon, warmup, entropy)


def simulate(model: ModelParams, horizon: float, warmup: float,
             replications: int, seed: int, workers: int = 1,
             trace_path: str | None = None) -> SimEstimates:
    """Run independent replications and aggregate t-based 95% intervals."""
    if horizon <= warmup or warmup < 0:
        raise ValueError("need horizon > warmup >= 0")
    if replications < 1:
        raise ValueError("need at least one replication")
    children = np.random.SeedSequence(seed).spawn(replications)
    jobs = [(model, horizon, warmup, child) for child in children]
    if trace_path:
        with open(trace_path, "w") as fh:
            first = _replication(model, horizon, warmup, children[0], trace=fh)
        results = [first]
        rest = jobs[1:]
    else:
        results = []
        rest = jobs
    if workers > 1 and rest:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results.extend(pool.map(_rep_job, rest, chunksize=1))
    else:
        results.extend(_rep_job(j) for j in rest)

    per = {k: np.array([r[k] for r in results]) for k in SIM_MEASURES}
    n = replications
    tq = float(stats.t.ppf(0.975, n - 1)) if n > 1 else float("nan")
    est = {k: float(v.mean()) for k, v in per.items()}
    half = {
        k: float(tq * v.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
        for k, v in per.items()
    }
    return SimEstimates(estimates=est, half_widths=half, per_replication=per,
                        replications=n, horizon=horizon, warmup=warmup)


def sample_interarrivals(m: MapProcess, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """n successive arrival epochs and call types (1 handoff, 2 new)."""
    if n < 1:
        raise ValueError("need n >= 1")
    rng = np.random.default_rng(seed)
    rate, cum, targets, kinds = _map_tables(m)
    pi_cum = np.cumsum(m.pi)
    v = int(np.searchsorted(pi_cum / pi_cum[-1], rng.random(), side="right"))
    times = np.empty(n)
    types = np.empty(n, dtype=np.int64)
    t = 0.0
    got = 0
    while got < n:
        t += -np.log(1.0 - rng.random()) / rate[v]
        u = rng.random() * rate[v]
        k = int(np.searchsorted(cum[v], u, side="right"))
        if k >= len(targets[v]):
            k = len(targets[v]) - 1
        kind = kinds[v][k]
        v = targets[v][k]
        if kind:
            times[got] = t
            types[got] = kind
            got += 1
    return times, types
