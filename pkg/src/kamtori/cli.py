"""Command line front-end: ``kamtori {solve,continue,certify,validate}``.

Configuration is a flat ``key = value`` text file.  ``[section]`` headers
prefix the keys that follow, so ``[freq]`` then ``omega = golden`` is the same
as ``freq.omega = golden``.  ``--set key=value`` overrides win over the file.

Exit codes: 0 success, 2 divergence, 3 configuration or input error,
4 certificate condition not met, 5 validation above threshold.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import certificate, cohomology, geometry, newton, system as systems
from .errors import ConfigError, DivergenceError, DomainError, KamError
from .fourier import VectorSeries, as_shape, as_trunc, check_margin, resize_coeffs

log = logging.getLogger("kamtori")

EXIT_OK = 0
EXIT_DIVERGED = 2
EXIT_CONFIG = 3
EXIT_CERT_FAIL = 4
EXIT_THRESHOLD = 5

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

DEFAULTS = {
    "system.name": "pendulum",
    "system.epsilon": "0.01",
    "system.amplitude": "0.2",
    "system.y_min": "-1.0",
    "system.y_max": "2.0",
    "system.imag_radius": "0.2",
    "freq.omega": "golden",
    "freq.alpha": "1.0",
    "freq.gamma": "0.01",
    "freq.tau": "1.2",
    "freq.box_radius": "50",
    "torus.trunc": "32",
    "torus.grid": "",
    "torus.actions": "",
    "torus.input": "",
    "newton.max_iters": "20",
    "newton.stop_tol": "1e-11",
    "newton.rho0": "0.1",
    "newton.a1": "2.0",
    "newton.a2": "2.0",
    "continue.schedule": "",
    "validate.t_final": "20.0",
    "validate.samples": "16",
    "validate.seed": "0",
    "validate.threshold": "1e-7",
    "certify.rho": "0.02",
    "certify.box_radius": "50",
    "certify.a1": "2.0",
    "certify.a2": "2.0",
    "output.dir": "runs",
}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if section and "." not in key:
            key = f"{section}.{key}"
        out[key] = value
    return out


def load_config(path=None, overrides=()) -> dict:
    cfg = dict(DEFAULTS)
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        cfg.update(parse_config_text(text, str(path)))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        cfg[key] = value
    unknown = sorted(set(cfg) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return cfg


def _number(token: str) -> float:
    token = token.strip()
    if token.lower() == "golden":
        return GOLDEN
    try:
        return float(token)
    except ValueError:
        raise ConfigError(f"not a number: {token!r}") from None


def _floats(cfg, key) -> list:
    raw = cfg[key].strip()
    if not raw:
        return []
    return [_number(t) for t in raw.replace(",", " ").split()]


def _float(cfg, key) -> float:
    vals = _floats(cfg, key)
    if len(vals) != 1:
        raise ConfigError(f"{key} expects a single number, got {cfg[key]!r}")
    return vals[0]


def _int(cfg, key) -> int:
    v = _float(cfg, key)
    if v != int(v):
        raise ConfigError(f"{key} expects an integer, got {cfg[key]!r}")
    return int(v)


def _ints(cfg, key) -> list:
    vals = _floats(cfg, key)
    if any(v != int(v) for v in vals):
        raise ConfigError(f"{key} expects integers, got {cfg[key]!r}")
    return [int(v) for v in vals]


@dataclass
class RunConfig:
    raw: dict
    system_name: str
    system_params: dict
    freqs: cohomology.Frequencies
    freq_box: int
    trunc: tuple
    grid: tuple
    actions: np.ndarray
    torus_input: str
    newton: newton.NewtonConfig
    schedule: list
    t_final: float
    samples: int
    seed: int
    threshold: float
    cert_rho: float
    cert_box: int
    cert_a1: float
    cert_a2: float
    out_dir: Path

    def make_system(self, epsilon=None):
        params = dict(self.system_params)
        if epsilon is not None:
            params["epsilon"] = epsilon
        y_range = (params.pop("y_min"), params.pop("y_max"))
        name = self.system_name
        ell = self.freqs.dims.ell
        try:
            if name == "pendulum":
                return systems.forced_pendulum(params["epsilon"], ell, y_range, params["imag_radius"])
            if name == "rotator":
                return systems.rotator(ell, y_range)
            if name == "conformal_pendulum":
                return systems.conformal_pendulum(params["epsilon"], params["amplitude"], y_range)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        raise ConfigError(f"unknown system {name!r}; choose from {', '.join(systems.SYSTEMS)}")


def build_run_config(cfg: dict) -> RunConfig:
    try:
        freqs = cohomology.Frequencies(
            _floats(cfg, "freq.omega"), _floats(cfg, "freq.alpha"), _float(cfg, "freq.gamma"), _float(cfg, "freq.tau")
        )
        dims = freqs.dims
        tvals = _ints(cfg, "torus.trunc")
        if not tvals:
            raise ConfigError("torus.trunc is required")
        trunc = as_trunc(tvals if len(tvals) > 1 else tvals[0], dims)
        grid_vals = _ints(cfg, "torus.grid")
        grid = as_shape(grid_vals if len(grid_vals) != 1 else grid_vals[0], dims) if grid_vals else None
        if grid is not None:
            check_margin(grid, trunc)
        actions = np.array(_floats(cfg, "torus.actions") or list(freqs.omega))
        if actions.size != dims.n:
            raise ConfigError(f"torus.actions needs {dims.n} values")
        nconf = newton.NewtonConfig(
            max_iters=_int(cfg, "newton.max_iters"),
            stop_tol=_float(cfg, "newton.stop_tol"),
            rho0=_float(cfg, "newton.rho0"),
            a1=_float(cfg, "newton.a1"),
            a2=_float(cfg, "newton.a2"),
            shape=grid,
        )
        params = {
            "epsilon": _float(cfg, "system.epsilon"),
            "amplitude": _float(cfg, "system.amplitude"),
            "y_min": _float(cfg, "system.y_min"),
            "y_max": _float(cfg, "system.y_max"),
            "imag_radius": _float(cfg, "system.imag_radius"),
        }
        rc = RunConfig(
            raw=cfg,
            system_name=cfg["system.name"].strip(),
            system_params=params,
            freqs=freqs,
            freq_box=_int(cfg, "freq.box_radius"),
            trunc=trunc,
            grid=grid,
            actions=actions,
            torus_input=cfg["torus.input"].strip(),
            newton=nconf,
            schedule=_floats(cfg, "continue.schedule"),
            t_final=_float(cfg, "validate.t_final"),
            samples=_int(cfg, "validate.samples"),
            seed=_int(cfg, "validate.seed"),
            threshold=_float(cfg, "validate.threshold"),
            cert_rho=_float(cfg, "certify.rho"),
            cert_box=_int(cfg, "certify.box_radius"),
            cert_a1=_float(cfg, "certify.a1"),
            cert_a2=_float(cfg, "certify.a2"),
            out_dir=Path(cfg["output.dir"].strip() or "."),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if rc.torus_input and not Path(rc.torus_input).exists():
        raise ConfigError(f"torus.input {rc.torus_input} does not exist")
    rc.make_system()
    return rc


# ---------------------------------------------------------------------------
# run directory


class RunDirectory:
    """Timestamped directory that is never reused; records every artifact in a manifest."""

    def __init__(self, root: Path, command: str):
        root.mkdir(parents=True, exist_ok=True)
        stamp = time.strftime("%Y%m%d-%H%M%S")
        for i in range(1000):
            name = f"{command}-{stamp}" + (f"-{i}" if i else "")
            try:
                (root / name).mkdir()
            except FileExistsError:
                continue
            self.path = root / name
            break
        else:
            raise ConfigError(f"could not allocate a run directory under {root}")
        self.command = command
        self.artifacts = []
        self.status = None

    def write(self, name: str, text: str) -> Path:
        p = self.path / name
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
        self.artifacts.append(name)
        return p

    def write_embedding(self, K, sub: str = "torus") -> Path:
        names = geometry.write_embedding(K, self.path / sub)
        self.artifacts.extend(f"{sub}/{n}" for n in names)
        return self.path / sub / geometry.EMBEDDING_INDEX

    def close(self, cfg: dict, status: int, message: str = ""):
        lines = [
            f"command\t{self.command}",
            f"exit_status\t{status}",
            f"message\t{message}",
            f"numpy\t{np.__version__}",
        ]
        lines += [f"config\t{k}\t{v}" for k, v in sorted(cfg.items())]
        for name in self.artifacts:
            digest = hashlib.sha256((self.path / name).read_bytes()).hexdigest()
            lines.append(f"artifact\t{name}\t{digest}")
        (self.path / "manifest.txt").write_text("\n".join(lines) + "\n")


def _initial_torus(rc: RunConfig):
    if rc.torus_input:
        K = geometry.read_embedding(rc.torus_input)
        if K.dims != rc.freqs.dims:
            raise ConfigError("torus.input dimensions do not match the frequencies")
        if K.trunc != rc.trunc:
            coeffs = resize_coeffs(K.periodic.coeffs, K.trunc, rc.trunc)
            K = geometry.TorusEmbedding(VectorSeries(K.dims, rc.trunc, coeffs), K.winding)
        return K
    return geometry.TorusEmbedding.rotator(rc.freqs.dims, rc.trunc, rc.actions)


def _check_frequencies(rc: RunConfig, run: RunDirectory):
    try:
        rep = cohomology.check_diophantine(rc.freqs, rc.freq_box)
    except KamError as exc:
        raise ConfigError(f"frequency vector rejected: {exc}") from exc
    text = (
        f"box_radius\t{rep.box_radius}\n"
        f"effective_gamma\t{rep.effective_gamma!r}\n"
        f"worst_index\t{' '.join(map(str, rep.worst_index))}\n"
        f"requested_gamma\t{rep.gamma!r}\n"
        f"tau\t{rep.tau!r}\n"
        f"passed\t{rep.passed}\n"
    )
    run.write("diophantine.txt", text)
    if not rep.passed:
        log.warning("requested gamma %.3e exceeds the scanned constant %.3e", rep.gamma, rep.effective_gamma)
    return rep


def _solve_one(rc, system, K0, run, sub=""):
    prefix = f"{sub}/" if sub else ""
    try:
        K, hist = newton.run_iteration(K0, system, rc.freqs, rc.newton)
    except DivergenceError as exc:
        run.write(prefix + "history.tsv", newton.history_table(exc.history))
        raise
    run.write(prefix + "history.tsv", newton.history_table(hist))
    run.write_embedding(K, prefix + "torus")
    return K, hist


# ---------------------------------------------------------------------------
# subcommands


def cmd_solve(rc: RunConfig, run: RunDirectory, threads: int = 1):
    _check_frequencies(rc, run)
    system = rc.make_system()
    K0 = _initial_torus(rc)
    try:
        K, hist = _solve_one(rc, system, K0, run)
    except DivergenceError as exc:
        return EXIT_DIVERGED, f"diverged: {exc}"
    except DomainError as exc:
        return EXIT_CONFIG, f"initial torus inadmissible: {exc}"
    except KamError as exc:
        return EXIT_DIVERGED, f"solver failed: {exc}"
    if not hist.converged:
        return EXIT_DIVERGED, f"no convergence in {rc.newton.max_iters} steps (error {hist.final_error:.3e})"
    order = hist.convergence_order()
    return EXIT_OK, f"converged in {len(hist)} steps, error {hist.final_error:.3e}, order {order:.3f}"


def cmd_continue(rc: RunConfig, run: RunDirectory, threads: int = 1):
    header = "leg\tepsilon\tstatus\tsteps\tfinal_error\torder"
    rows = [header]
    if not rc.schedule:
        run.write("continuation.tsv", header + "\n")
        return EXIT_OK, "empty schedule"
    _check_frequencies(rc, run)
    K = _initial_torus(rc)
    status, message = EXIT_OK, f"{len(rc.schedule)} tori computed"
    for leg, eps in enumerate(rc.schedule):
        system = rc.make_system(eps)
        sub = f"leg{leg:03d}"
        try:
            K, hist = _solve_one(rc, system, K, run, sub)
            ok = hist.converged
            detail = (len(hist), hist.final_error, hist.convergence_order())
        except KamError as exc:
            log.warning("leg %d failed: %s", leg, exc)
            ok, detail = False, None
            hist = getattr(exc, "history", None)
            if hist is not None:
                detail = (len(hist), hist.final_error, hist.convergence_order())
        if ok:
            rows.append(f"{leg}\t{eps!r}\tconverged\t{detail[0]}\t{detail[1]!r}\t{detail[2]!r}")
            continue
        if detail is None:
            rows.append(f"{leg}\t{eps!r}\tSTOPPED\t-\t-\t-")
        else:
            rows.append(f"{leg}\t{eps!r}\tSTOPPED\t{detail[0]}\t{detail[1]!r}\t{detail[2]!r}")
        status = EXIT_DIVERGED
        message = f"stopped at leg {leg} (epsilon={eps}); {leg} tori computed"
        log.warning("continuation stopped at epsilon=%g", eps)
        break
    run.write("continuation.tsv", "\n".join(rows) + "\n")
    return status, message


def _require_input(rc: RunConfig):
    if not rc.torus_input:
        raise ConfigError("torus.input must point to an embedding index")
    K = geometry.read_embedding(rc.torus_input)
    if K.dims != rc.freqs.dims:
        raise ConfigError("torus.input dimensions do not match the frequencies")
    return K


def cmd_certify(rc: RunConfig, run: RunDirectory, threads: int = 1):
    K = _require_input(rc)
    system = rc.make_system()
    try:
        rep = certificate.certify(
            K, system, rc.freqs, rc.cert_rho, rc.cert_box, rc.cert_a1, rc.cert_a2, shape=rc.grid
        )
    except DomainError as exc:
        return EXIT_CONFIG, f"torus inadmissible for the certificate: {exc}"
    except KamError as exc:
        run.write("certificate.txt", f"KAM certificate\nverdict\tFAIL\nreason\t{exc}\n")
        run.write("certificate.kv", f"verdict\tFAIL\treason: {exc}\n")
        return EXIT_CERT_FAIL, f"hypothesis not met: {exc}"
    run.write("certificate.txt", rep.to_text())
    run.write("certificate.kv", rep.to_kv())
    log.info("certificate verdict %s, lhs %.3e", rep.verdict, rep.lhs)
    if rep.passed:
        return EXIT_OK, f"PASS lhs={rep.lhs:.6e}"
    return EXIT_CERT_FAIL, f"FAIL lhs={rep.lhs:.6e}"


def cmd_validate(rc: RunConfig, run: RunDirectory, threads: int = 1):
    K = _require_input(rc)
    system = rc.make_system()
    try:
        res = systems.flow_validate(K, system, rc.freqs, rc.t_final, rc.samples, rc.seed, workers=threads)
    except KamError as exc:
        run.write("validation.tsv", f"# failed\t{exc}\n")
        return EXIT_THRESHOLD, f"validation failed: {exc}"
    lines = ["sample\t" + "\t".join(f"angle{j}" for j in range(res.initial_angles.shape[1])) + "\tdeviation"]
    for i, (a, d) in enumerate(zip(res.initial_angles, res.per_sample)):
        lines.append(f"{i}\t" + "\t".join(repr(float(x)) for x in a) + f"\t{float(d)!r}")
    lines.append(f"# max_deviation\t{res.max_deviation!r}\tthreshold\t{rc.threshold!r}\tt_final\t{res.t_final!r}")
    run.write("validation.tsv", "\n".join(lines) + "\n")
    if res.max_deviation < rc.threshold:
        return EXIT_OK, f"max deviation {res.max_deviation:.3e}"
    return EXIT_THRESHOLD, f"max deviation {res.max_deviation:.3e} not below {rc.threshold:.3e}"


COMMANDS = {"solve": cmd_solve, "continue": cmd_continue, "certify": cmd_certify, "validate": cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kamtori", description="Invariant tori of quasi-periodically forced Hamiltonians.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, default=None)
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        sp.add_argument("--out", type=Path, default=None, help="root directory for run folders")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config, args.overrides)
        if args.out is not None:
            cfg["output.dir"] = str(args.out)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        rc = build_run_config(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    run = RunDirectory(rc.out_dir, args.command)
    try:
        status, message = COMMANDS[args.command](rc, run, args.threads)
    except ConfigError as exc:
        status, message = EXIT_CONFIG, f"config error: {exc}"
    run.close(cfg, status, message)
    stream = sys.stdout if status == EXIT_OK else sys.stderr
    print(f"{args.command}: {message}", file=stream)
    print(f"run directory: {run.path}", file=stream)
    return status


if __name__ == "__main__":
    sys.exit(main())
