"""Experiment drivers behind the command-line interface.

Each ``cmd_*`` function takes a validated :class:`ExperimentConfig` and an
output directory, writes its artifacts there and returns a small summary
dict.  Outputs are deterministic for a given config; JSON files embed a
manifest block and CSV files get a ``manifest.json`` sidecar.
"""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import control as C
from .config import ExperimentConfig, manifest
from .kernels import default_backend
from .reference import build_w, build_xi, verify_a1
from .solvers import TimeGrid, hnkdv_solve, write_norms_csv
from .spectral import Grid, SpectralField, from_trigpoly
from .trig import ModeSet, hk_subspace, saturation_report

log = logging.getLogger(__name__)


class ExperimentError(RuntimeError):
    """An experiment ran but its built-in check failed."""


@dataclass(eq=False)
class Setup:
    """Objects derived from a config, shared by all commands."""

    cfg: ExperimentConfig
    backend: str
    grid: Grid = field(init=False)
    tg: TimeGrid = field(init=False)
    J: ModeSet = field(init=False)
    basis: C.ControlBasis = field(init=False)
    w: object = field(init=False)
    u0: SpectralField = field(init=False)
    u1: SpectralField = field(init=False)
    _operator: C.SynthesisOperator | None = field(default=None, init=False)

    def __post_init__(self):
        cfg = self.cfg
        self.grid = Grid(cfg.grid.N, cfg.grid.M)
        self.tg = TimeGrid(0.0, cfg.time.T, cfg.time.n_steps)
        self.J = ModeSet(tuple(cfg.modes))
        self.basis = C.ControlBasis(hk_subspace(self.J, 1), cfg.control.n_time_cells, cfg.time.T)
        self.w = build_w(self.J, cfg.time.T, cfg.trajectory.depth, cfg.trajectory.amplitude)
        self.u0 = from_trigpoly(cfg.state_poly("u0"), self.grid)
        self.u1 = from_trigpoly(cfg.state_poly("u1"), self.grid)

    @classmethod
    def from_config(cls, cfg: ExperimentConfig, backend: str | None = None) -> Setup:
        return cls(cfg, backend or default_backend())

    @property
    def operator(self) -> C.SynthesisOperator:
        if self._operator is None:
            c = self.cfg.control
            self._operator = C.assemble_T(
                self.w, self.basis, self.grid, self.tg, c.target_cutoff, self.cfg.s, self.backend
            )
            log.info("assembled T %s in %.2f s", self._operator.shape, self._operator.assembly_seconds)
        return self._operator

    def target(self) -> np.ndarray:
        """Encoded h = u1 - R_T(u0, 0) for the configured states."""
        mt, s = self.cfg.control.target_cutoff, self.cfg.s
        free = C.free_terminal(self.u0, self.w, self.grid, self.tg, self.backend)
        return C.encode(self.u1.half, mt, s) - C.encode(free, mt, s)

    def gamma(self) -> float:
        return C.select_gamma(self.operator, self.target(), self.cfg.control.gamma_ladder)

    def steer(self, tau: float, gamma: float) -> C.SteeringResult:
        cfg = self.cfg
        return C.steer(
            self.u0, self.u1, tau, gamma, cfg.control.rank_cutoff, cfg.j, cfg.s, self.grid, self.tg,
            self.basis, self.w, operator=self.operator, target_cutoff=cfg.control.target_cutoff,
            backend=self.backend,
        )


def _write_json(path: Path, payload: dict, cfg: ExperimentConfig, command: str, backend: str) -> None:
    payload = dict(payload)
    payload["manifest"] = manifest(cfg, command, backend)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_manifest(out: Path, cfg: ExperimentConfig, command: str, backend: str) -> None:
    (out / "manifest.json").write_text(
        json.dumps(manifest(cfg, command, backend), indent=2, sort_keys=True) + "\n"
    )


def _prepare(out: Path) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fmt(x: float) -> str:
    return repr(float(x))


# --- commands -------------------------------------------------------------------


def cmd_simulate(cfg: ExperimentConfig, out: Path, backend: str | None = None, nonlinear: bool = True) -> dict:
    """Free (unforced) evolution of u0."""
    out = _prepare(out)
    st = Setup.from_config(cfg, backend)
    traj = hnkdv_solve(st.u0, None, cfg.j, st.grid, st.tg, nonlinear, st.backend)
    write_norms_csv(out / "norms.csv", traj, cfg.s)
    traj.to_csv(out / "trajectory.csv")
    l2 = traj.norms(0)
    drift = float(np.max(np.abs(l2 - l2[0])) / l2[0]) if l2[0] > 0 else 0.0
    summary = {"l2_initial": float(l2[0]), "l2_final": float(l2[-1]), "l2_max_rel_drift": drift,
               "nonlinear": nonlinear, "n_steps": len(traj.times) - 1}
    _write_json(out / "simulate_summary.json", {**summary, "u_final": traj.final.to_json()}, cfg, "simulate", st.backend)
    _write_manifest(out, cfg, "simulate", st.backend)
    return summary


def cmd_saturation(cfg: ExperimentConfig, out: Path, mode_cutoff: int = 6, k_max: int = 6) -> dict:
    out = _prepare(out)
    rep = saturation_report(ModeSet(tuple(cfg.modes)), mode_cutoff, k_max)
    payload = rep.to_json()
    _write_json(out / "saturation_report.json", payload, cfg, "saturation", "none")
    return {"saturating": rep.saturating, "covered_at": rep.covered_at}


def cmd_check_a1(cfg: ExperimentConfig, out: Path, samples: int = 100, tol: float = 1e-10) -> dict:
    out = _prepare(out)
    J = ModeSet(tuple(cfg.modes))
    w = build_w(J, cfg.time.T, cfg.trajectory.depth, cfg.trajectory.amplitude)
    rep = verify_a1(w, build_xi(w), cfg.j, samples, tol, J)
    payload = rep.to_json()
    payload["w"] = w.to_json()
    _write_json(out / "a1_report.json", payload, cfg, "check-a1", "none")
    if not rep.ok:
        clause, t = rep.failures[0]
        raise ExperimentError(f"assumption check failed: clause {clause} at t={t:.6g}")
    return {"ok": rep.ok}


def _gramian_block(Tm: C.SynthesisOperator, targets: dict[str, np.ndarray], ladder) -> dict:
    sv = np.linalg.svd(Tm.matrix, compute_uv=False)
    G = C.gramian(Tm)
    block = {
        "shape": list(Tm.shape),
        "singular_values": [float(x) for x in sv],
        "sigma_min": float(sv.min()),
        "condition_number": C.gramian_condition(G),
        "delta_h": {},
    }
    for name, h in targets.items():
        hn = float(np.linalg.norm(h))
        rows = []
        for g in sorted(ladder, reverse=True):
            r = C.right_inverse_residuals(Tm, g, None, h)
            rows.append({"gamma": g, "delta_h": C.delta_h(G, h, g),
                         "relative_residual": r["residual"] / hn if hn else 0.0,
                         "control_norm": r["control_norm"]})
        block["delta_h"][name] = rows
    return block


def mode_targets(cutoff: int, s: int, max_mode: int = 3) -> dict[str, np.ndarray]:
    """Unit targets sin(kx), cos(kx) for k <= max_mode, encoded."""
    out = {}
    for k in range(1, max_mode + 1):
        for kind, c in (("sin", -0.5j), ("cos", 0.5)):
            half = np.zeros(cutoff + 1, dtype=complex)
            half[k] = c
            out[f"{kind}{k}"] = C.encode(half, cutoff, s)
    return out


def cmd_gramian(cfg: ExperimentConfig, out: Path, backend: str | None = None, compare_flat: bool = True) -> dict:
    out = _prepare(out)
    st = Setup.from_config(cfg, backend)
    Tm = st.operator
    mt = cfg.control.target_cutoff
    targets = {"canonical": st.target(), **mode_targets(mt, cfg.s, min(3, mt))}
    ladder = cfg.control.gamma_ladder
    rng = np.random.default_rng(cfg.seed)
    gv, hv = rng.standard_normal(Tm.shape[1]), rng.standard_normal(Tm.shape[0])
    adj = abs(float(hv @ (Tm.matrix @ gv)) - float((Tm.matrix.T @ hv) @ gv))
    payload = {
        "observable": _gramian_block(Tm, targets, ladder),
        "adjoint_residual": adj,
        "selected_gamma": st.gamma(),
        "assembly_seconds": Tm.assembly_seconds,
    }
    if compare_flat:
        wf = build_w(st.J, cfg.time.T, cfg.trajectory.depth, cfg.trajectory.amplitude, flat=True)
        Tf = C.assemble_T(wf, st.basis, st.grid, st.tg, mt, cfg.s, st.backend)
        payload["flat"] = _gramian_block(Tf, targets, ladder)
    Tm.save(out, "operator")
    _write_json(out / "gramian_report.json", payload, cfg, "gramian", st.backend)
    return {
        "condition_number": payload["observable"]["condition_number"],
        "sigma_min": payload["observable"]["sigma_min"],
        "selected_gamma": payload["selected_gamma"],
    }


def _steer_row(args):
    st, tau, gamma = args
    r = st.steer(tau, gamma)
    return {
        "tau": tau,
        "residual_s": r.residual_s,
        "linear_residual_s": r.linear_residual_s,
        "remainder_final": r.remainder_final,
        "gramian_condition": r.gramian_condition,
        "runtime_s": r.runtime_s,
    }


CONVERGE_COLUMNS = ["tau", "residual_s", "linear_residual_s", "remainder_final", "gramian_condition", "runtime_s"]


def cmd_converge_tau(cfg: ExperimentConfig, out: Path, workers: int = 1, backend: str | None = None) -> dict:
    out = _prepare(out)
    st = Setup.from_config(cfg, backend)
    gamma = st.gamma()
    jobs = [(st, tau, gamma) for tau in cfg.tau_ladder]
    rows = []
    path = out / "converge_tau.csv"
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, CONVERGE_COLUMNS)
        wr.writeheader()
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = pool.map(_steer_row, jobs)
                for row in results:
                    rows.append(row)
                    wr.writerow({k: _fmt(v) for k, v in row.items()})
                    fh.flush()
        else:
            for job in jobs:
                row = _steer_row(job)
                rows.append(row)
                wr.writerow({k: _fmt(v) for k, v in row.items()})
                fh.flush()
    _write_manifest(out, cfg, "converge-tau", st.backend)
    rem = [r["remainder_final"] for r in rows]
    monotone = all(b < a for a, b in zip(rem, rem[1:]))
    summary = {"gamma": gamma, "remainder_final": rem, "strictly_decreasing": monotone}
    if not monotone:
        raise ExperimentError(f"remainder_final not strictly decreasing along the ladder: {rem}")
    return summary


def cmd_fixed_time(cfg: ExperimentConfig, out: Path, backend: str | None = None) -> dict:
    out = _prepare(out)
    st = Setup.from_config(cfg, backend)
    gamma = st.gamma()
    ft = cfg.fixed_time
    payload = {"gamma": gamma, "tau": cfg.tau_ladder[-1]}
    try:
        res = C.fixed_time_steer(
            st.u0, st.u1, ft.T_total, cfg.tau_ladder[-1], gamma, cfg.control.rank_cutoff, cfg.j, cfg.s,
            st.grid, st.tg, st.basis, st.w, operator=st.operator, max_segments=ft.max_segments,
            backend=st.backend,
        )
    except C.FixedTimeError as exc:
        payload.update({"ok": False, "error": str(exc), "segments": exc.history})
        _write_json(out / "fixed_time_report.json", payload, cfg, "fixed-time", st.backend)
        raise ExperimentError(str(exc)) from exc
    payload.update(res.to_json())
    payload["ok"] = True
    payload["u_final"] = res.u_final.to_json()
    _write_json(out / "fixed_time_report.json", payload, cfg, "fixed-time", st.backend)
    return {"final_error": res.final_error, "budget": res.budget, "n_segments": len(res.segments)}
