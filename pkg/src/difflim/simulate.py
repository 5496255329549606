"""Exact event-driven simulation of the stochastic diffusion process.

Jumps occur at rate (beta*S/N)*I + p*S + gamma*I; each jump is a new
infection with probability S*(beta*I + p*N) / (S*(beta*I + p*N) + N*gamma*I)
and a recovery otherwise.  Two uniforms are consumed per jump in a fixed
order (holding time first, then jump type) so ledgers are reproducible.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    DiffusionState,
    JumpKind,
    JumpLedger,
    LedgerEntry,
    ModelParams,
    RngStream,
    ValidationError,
    validate_params,
)


class Terminated:
    """Sentinel returned by next_jump once i = 0 or i = n."""

    def __repr__(self) -> str:  # pragma: no cover
        return "Terminated"


TERMINATED = Terminated()


@dataclass(frozen=True)
class SimSpec:
    params: ModelParams
    i0: int
    r0: int = 0
    max_jumps: int = 1
    rng: RngStream = RngStream(seed=0)

    def __post_init__(self):
        validate_params(self.params)
        if self.max_jumps < 1:
            raise ValidationError("max_jumps must be >= 1")
        if self.i0 < 1:
            raise ValidationError("i0 must be >= 1 (the process starts with an infected unit)")
        if self.r0 < 0:
            raise ValidationError("r0 must be >= 0")
        if self.i0 + self.r0 > self.params.n:
            raise ValidationError("i0 + r0 exceeds the population")


def jump_rate(state: DiffusionState, params: ModelParams) -> float:
    return (params.beta * state.s / params.n) * state.i + params.p * state.s + params.gamma * state.i


def infection_probability(state: DiffusionState, params: ModelParams) -> float:
    num = state.s * (params.beta * state.i + params.p * params.n)
    den = num + params.n * params.gamma * state.i
    return num / den


def next_jump(state: DiffusionState, params: ModelParams, gen: np.random.Generator):
    """One transition: returns (T, kind) or TERMINATED.

    Always consumes exactly two uniforms when a jump occurs, time first.
    """
    if state.i == 0 or state.i == params.n:
        return TERMINATED
    lam = jump_rate(state, params)
    if lam <= 0:
        raise ValidationError("degenerate rates: zero total jump rate in a live state")
    u_time = gen.random()
    u_kind = gen.random()
    t = -math.log1p(-u_time) / lam
    kind = JumpKind.INFECTION if u_kind < infection_probability(state, params) else JumpKind.RECOVERY
    return t, kind


def _apply(state: DiffusionState, kind: JumpKind) -> DiffusionState:
    if kind is JumpKind.INFECTION:
        return DiffusionState(s=state.s - 1, i=state.i + 1, r=state.r)
    return DiffusionState(s=state.s, i=state.i - 1, r=state.r + 1)


def simulate_ledger(spec: SimSpec) -> JumpLedger:
    """Ledger of exactly max_jumps entries.

    Entries past the stopping index repeat the frozen state with an
    infinite holding time, so observation sets always have full length.
    """
    gen = spec.rng.generator()
    params = spec.params
    n = int(params.n)
    ledger = JumpLedger(n=n, i0=spec.i0, r0=spec.r0)
    state = ledger.initial_state
    t = 0.0
    for k in range(1, spec.max_jumps + 1):
        if ledger.terminated_at is None:
            step = next_jump(state, params, gen)
            if step is TERMINATED:
                ledger.terminated_at = k - 1
            else:
                dt, kind = step
                t += dt
                state = _apply(state, kind)
                ledger.entries.append(
                    LedgerEntry(t=t, inter_arrival=dt, kind=kind, state_after=state)
                )
                if state.i == 0 or state.i == n:
                    ledger.terminated_at = k
                continue
        ledger.entries.append(
            LedgerEntry(t=t, inter_arrival=math.inf, kind=None, state_after=state)
        )
    return ledger


def _worker(args) -> JumpLedger:
    params_dict, i0, r0, max_jumps, seed, stream_id = args
    spec = SimSpec(
        params=ModelParams.from_json_dict(params_dict),
        i0=i0,
        r0=r0,
        max_jumps=max_jumps,
        rng=RngStream(seed=seed, stream_id=stream_id),
    )
    return simulate_ledger(spec)


def simulate_batch(spec: SimSpec, replicates: int, parallelism: int = 1) -> list[JumpLedger]:
    """Replicate r uses stream (seed, base_stream + r); output order is by
    replicate index regardless of the worker pool size."""
    if replicates < 1:
        raise ValidationError("replicates must be >= 1")
    args = [
        (
            spec.params.to_json_dict(),
            spec.i0,
            spec.r0,
            spec.max_jumps,
            spec.rng.seed,
            spec.rng.stream_id + r,
        )
        for r in range(replicates)
    ]
    if parallelism <= 1:
        return [_worker(a) for a in args]
    with ProcessPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(_worker, args))


def dominated_walk(spec: SimSpec, p_bern: float) -> np.ndarray:
    """Comparison process A_0..A_m: A_0 = c0, steps are iid Bernoulli(p_bern)
    increments, frozen after the first index where A_k <= (i0 + k + 2*r0)/2.

    The walk is stochastically below the cumulative count of the diffusion
    whenever every infection probability along feasible paths exceeds
    p_bern, which makes its stopping time an upper bound in distribution.
    """
    if not 0 <= p_bern <= 1:
        raise ValidationError("p_bern must be in [0, 1]")
    gen = spec.rng.generator()
    m = spec.max_jumps
    c0 = spec.i0 + spec.r0
    out = np.empty(m + 1, dtype=np.int64)
    out[0] = c0
    frozen = False
    for k in range(1, m + 1):
        if frozen:
            out[k] = out[k - 1]
            continue
        out[k] = out[k - 1] + (1 if gen.random() < p_bern else 0)
        if 2 * out[k] <= spec.i0 + k + 2 * spec.r0:
            frozen = True
    return out


def walk_stopping_time(walk: np.ndarray, i0: int, r0: int) -> Optional[int]:
    """First index k >= 1 with A_k <= (i0 + k + 2*r0)/2, or None."""
    ks = np.arange(1, len(walk))
    hit = np.nonzero(2 * walk[1:] <= i0 + ks + 2 * r0)[0]
    return int(hit[0]) + 1 if hit.size else None


# ---------------------------------------------------------------------------
# Vectorized lockstep simulation over replicates.  Used by the Fisher and
# estimation Monte-Carlo machinery, where only (T_k, C_k) paths are needed.
# Per step all replicates draw a holding time, then a jump type, so the
# consumed stream is a fixed function of (seed, stream) alone.
# ---------------------------------------------------------------------------


@dataclass
class PathBlock:
    """Columns are replicates.  T[k-1, r] is the k-th holding time (inf once
    stopped), C[k, r] the cumulative count after k jumps (frozen once
    stopped), alive[k, r] whether the process is still live after k jumps,
    infected[k, r] the live infected count (0 once stopped)."""

    T: np.ndarray
    C: np.ndarray
    alive: np.ndarray
    infected: np.ndarray

    @property
    def m(self) -> int:
        return self.T.shape[0]

    @property
    def replicates(self) -> int:
        return self.T.shape[1]


def simulate_paths(
    params: ModelParams,
    i0: int,
    r0: int,
    m: int,
    rng: RngStream,
    replicates: int,
) -> PathBlock:
    validate_params(params)
    if i0 < 1:
        raise ValidationError("i0 must be >= 1")
    n = float(params.n)
    beta, gamma, p = params.beta, params.gamma, params.p
    gen = rng.generator()

    R = replicates
    s = np.full(R, n - i0 - r0, dtype=float)
    i = np.full(R, float(i0), dtype=float)
    rr = np.full(R, float(r0), dtype=float)
    alive_now = (i > 0) & (i < n)

    T = np.full((m, R), np.inf)
    C = np.empty((m + 1, R), dtype=np.int64)
    alive = np.empty((m + 1, R), dtype=bool)
    infected = np.empty((m + 1, R), dtype=np.int64)
    C[0] = int(i0 + r0)
    alive[0] = alive_now
    infected[0] = np.where(alive_now, int(i0), 0)

    for k in range(1, m + 1):
        lam = (beta * s / n) * i + p * s + gamma * i
        u_time = gen.random(R)
        u_kind = gen.random(R)
        ok = alive_now & (lam > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            dt = -np.log1p(-u_time) / lam
            num = s * (beta * i + p * n)
            p_inf = num / (num + n * gamma * i)
        T[k - 1, ok] = dt[ok]
        is_inf = u_kind < p_inf
        ds = np.where(ok & is_inf, -1.0, 0.0)
        di = np.where(ok, np.where(is_inf, 1.0, -1.0), 0.0)
        dr = np.where(ok & ~is_inf, 1.0, 0.0)
        s += ds
        i += di
        rr += dr
        alive_now = alive_now & (i > 0) & (i < n)
        C[k] = (i + rr).astype(np.int64)
        alive[k] = alive_now
        infected[k] = np.where(alive_now, i, 0.0).astype(np.int64)

    return PathBlock(T=T, C=C, alive=alive, infected=infected)
