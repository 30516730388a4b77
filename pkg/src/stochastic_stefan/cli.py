"""Command line front end: ``stefan <subcommand> [--config FILE] [key=value ...]``.

Subcommands: ``mesh-info``, ``diagnostics``, ``run``, ``convergence`` and
``mushy``. Configuration is flat ``key = value`` text (``#`` starts a
comment); ``key=value`` arguments and ``--seed`` override the file. Exit
codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import re
import sys
from dataclasses import dataclass, fields

import numpy as np

from .discretisations import build
from .experiments import EnsembleSpec, ExperimentReport, Level, level_gd, run_ensemble
from .gdm import coercivity_constant, s_defect, w_defect
from .meshgen import FAMILIES, resolve_mesh
from .model import make_model
from .noise import generate, power_law, save_paths, sine_basis, steps_for
from .stepper import GradientScheme, LinearSolveError, NewtonConfig, NewtonError, StepLog

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


class ConfigError(ValueError):
    pass


class EmptyReportError(RuntimeError):
    pass


# -- configuration -----------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    subcommand: str = "run"
    test: int = 1
    scheme: str = "mlp1"
    mesh: tuple = ()
    reference: str | None = None
    r: float = 0.5
    nf: tuple = (1.0,)
    seed: int = 0
    paths: int = 100
    path: int = 0
    T: float = 1.0
    n_max: int | None = None
    out: str = "."
    plateau: tuple | None = None
    plot: bool = True
    workers: int = 1
    q_modes: int = 0
    q_decay: float = 1.0
    condense: bool = False
    exact_reference: bool = False
    newton_tol: float = 1e-9
    newton_variable: str = "temperature"
    cache: str | None = None
    save_paths: str | None = None

    def newton(self) -> NewtonConfig:
        return NewtonConfig(tol=self.newton_tol, variable=self.newton_variable)

    def q(self) -> tuple | None:
        return tuple(power_law(self.q_modes, self.q_decay)) if self.q_modes else None

    def steps(self, mesh_name: str) -> int:
        return steps_for(resolve_mesh(mesh_name).h, self.T)


KEYS = {f.name for f in fields(RunConfig)} - {"subcommand"}
SUBCOMMANDS = ("mesh-info", "diagnostics", "run", "convergence", "mushy")


def _bool(key, v: str) -> bool:
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {v!r}")


def expand_meshes(value: str) -> tuple:
    """``mesh1-01..04``, comma-separated names, or file paths."""
    out = []
    for item in (s.strip() for s in value.split(",")):
        if not item:
            continue
        m = re.fullmatch(r"(.*?)(\d+)\.\.(\d+)", item)
        if m:
            stem, a, b = m.group(1), m.group(2), m.group(3)
            if int(b) < int(a):
                raise ConfigError(f"mesh: empty range {item!r}")
            out.extend(f"{stem}{k:0{len(a)}d}" for k in range(int(a), int(b) + 1))
        else:
            out.append(item)
    return tuple(out)


def _convert(key: str, v: str):
    v = v.strip()
    try:
        if key in ("test", "seed", "paths", "path", "workers", "q_modes"):
            x = int(v)
            if key == "test" and x not in (1, 2):
                raise ConfigError(f"test: must be 1 or 2, got {x}")
            if key in ("seed", "path", "q_modes") and x < 0:
                raise ConfigError(f"{key}: must be nonnegative, got {x}")
            if key in ("paths", "workers") and x < 1:
                raise ConfigError(f"{key}: must be positive, got {x}")
            return x
        if key in ("r", "T", "q_decay", "newton_tol"):
            x = float(v)
            if key == "r" and not 0.0 <= x <= 1.0:
                raise ConfigError(f"r: must lie in [0, 1], got {x}")
            if key in ("T", "newton_tol") and not x > 0:
                raise ConfigError(f"{key}: must be positive, got {x}")
            if key == "q_decay" and not x > 0.5:
                raise ConfigError(f"q_decay: must exceed 1/2, got {x}")
            return x
        if key == "nf":
            vals = tuple(float(s) for s in v.split(",") if s.strip())
            if not vals or any(x < 0 for x in vals):
                raise ConfigError(f"nf: expected nonnegative values, got {v!r}")
            return vals
        if key == "n_max":
            if v.lower() == "auto":
                return None
            x = int(v)
            if x < 1 or x & (x - 1):
                raise ConfigError(f"n_max: must be 'auto' or a power of two, got {v!r}")
            return x
        if key == "plateau":
            if v.lower() in ("", "default"):
                return None
            if v.lower() == "unit":
                return (0.0, 1.0)
            lo, hi = (float(s) for s in v.split(","))
            if not lo < hi:
                raise ConfigError(f"plateau: need lo < hi, got {v!r}")
            return (lo, hi)
        if key in ("plot", "condense", "exact_reference"):
            return _bool(key, v)
        if key == "scheme":
            if v.lower() not in ("mlp1", "hmm"):
                raise ConfigError(f"scheme: must be mlp1 or hmm, got {v!r}")
            return v.lower()
        if key == "newton_variable":
            if v not in ("temperature", "enthalpy"):
                raise ConfigError(f"newton_variable: must be temperature or enthalpy, got {v!r}")
            return v
        if key == "mesh":
            return expand_meshes(v)
        if key in ("reference", "cache", "save_paths"):
            return v or None
        return v
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{key}: invalid value {v!r}") from exc


def parse_pairs(text: str, source: str = "config") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = _convert(key, value)
    return out


def parse_config(text: str = "", overrides: dict | None = None,
                 subcommand: str = "run", require_mesh: bool = True) -> RunConfig:
    """Validated :class:`RunConfig` from config text plus already-typed or raw overrides."""
    values = parse_pairs(text)
    for key, v in (overrides or {}).items():
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _convert(key, v) if isinstance(v, str) else v
    cfg = RunConfig(subcommand=subcommand, **values)
    if require_mesh and not cfg.mesh:
        raise ConfigError("mesh: no mesh given")
    for name in cfg.mesh + ((cfg.reference,) if cfg.reference else ()):
        if name not in FAMILIES and not os.path.exists(name):
            raise ConfigError(f"mesh: {name!r} is neither a known family member nor a file")
    return cfg


# -- output ------------------------------------------------------------------

def fmt(x) -> str:
    """15 significant digits; integers stay integers."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.15g}"


def write_table(path: str, columns: list[str], rows: list[list]) -> None:
    with open(path, "w") as fh:
        fh.write(" ".join(columns) + "\n")
        for row in rows:
            fh.write(" ".join(fmt(v) for v in row) + "\n")


def read_table(path: str) -> tuple[list[str], np.ndarray]:
    with open(path) as fh:
        cols = fh.readline().split()
    data = np.loadtxt(path, skiprows=1, ndmin=2)
    return cols, data


def scheme_prefix(level: Level) -> str:
    """``PT`` (MLP1 on triangles), ``HT`` (HMM on triangles) or ``HH`` (HMM on hexagons)."""
    if level.scheme == "mlp1":
        return "PT"
    return "HT" if level_gd(level).mesh.is_triangulation else "HH"


def nf_label(nf: float) -> str:
    return str(int(nf)) if float(nf).is_integer() else fmt(nf)


def _outdir(out: str) -> str:
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"out: cannot create output directory {out!r}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise ConfigError(f"out: output directory {out!r} is not writable")
    return out


def emit_tables(report: ExperimentReport, out: str, stem: str) -> list[str]:
    """Errors and values tables for a convergence report; returns the file paths."""
    if not report or report.reference is None:
        raise EmptyReportError("empty report: nothing to write")
    _outdir(out)
    pre = scheme_prefix(report.levels[0].level)
    written = []
    err = os.path.join(out, f"{stem}_errors.dat")
    write_table(err, ["h", "ndofs", f"{pre}_EL2z", f"{pre}_EH1z", f"{pre}_EL1Xi"],
                [[lv.h, lv.ndofs, *lv.errors] for lv in report.levels])
    written.append(err)
    val = os.path.join(out, f"{stem}_values.dat")
    allv = report.levels + [report.reference]
    write_table(val, ["h", "ndofs", f"{pre}_L2z", f"{pre}_H1z", f"{pre}_L1Xi"],
                [[lv.h, lv.ndofs, *lv.norms] for lv in allv])
    written.append(val)
    new = os.path.join(out, f"{stem}_newton.dat")
    write_table(new, ["h", "ndofs", "steps", "mean_its", "relaxations_per_path"],
                [[lv.h, lv.ndofs, lv.steps, lv.mean_iterations, lv.relaxations_per_path]
                 for lv in allv])
    written.append(new)
    return written


def emit_mushy_table(series: dict, out: str, stem: str) -> str:
    """``series`` maps nf to ``(t, Exp, SD)`` on a common time grid."""
    if not series:
        raise EmptyReportError("empty report: nothing to write")
    _outdir(out)
    nfs = list(series)
    n = len(series[nfs[0]][0])
    cols = ["idt"]
    for nf in nfs:
        cols += [f"nf{nf_label(nf)}_Exp", f"nf{nf_label(nf)}_SD"]
    rows = []
    for i in range(n):
        row = [i]
        for nf in nfs:
            row += [series[nf][1][i], series[nf][2][i]]
        rows.append(row)
    path = os.path.join(out, f"{stem}_mushy.dat")
    write_table(path, cols, rows)
    return path


_PGF_HEAD = r"""\documentclass{standalone}
\usepackage{pgfplots}
\pgfplotsset{compat=1.16}
\begin{document}
"""
_PGF_TAIL = "\\end{document}\n"


def _slope_triangle(h: list[float], e: list[float]) -> str:
    # slope-1 triangle anchored below the last data point
    x1, y1 = min(h), min(e) * 0.5
    x0 = x1 * 2.0
    return (f"\\draw ({x0:.6g},{y1:.6g}) -- ({x1:.6g},{y1:.6g}) -- "
            f"({x0:.6g},{y1 * 2.0:.6g}) -- cycle node[right] {{1}};\n")


def emit_plots(report: ExperimentReport, out: str, stem: str) -> list[str]:
    """pgfplots sources for errors vs h (with a slope-1 triangle), errors vs
    ndofs and norms vs h. The images are not rendered here."""
    if not report or report.reference is None:
        raise EmptyReportError("empty report: nothing to plot")
    _outdir(out)
    pre = scheme_prefix(report.levels[0].level)
    h = [lv.h for lv in report.levels]
    e = [x for lv in report.levels for x in lv.errors if x > 0] or [1.0]
    written = []
    for name, xcol, table, ycols, tri in (
            ("errors_h", "h", "errors", ("EL2z", "EH1z", "EL1Xi"), True),
            ("errors_ndofs", "ndofs", "errors", ("EL2z", "EH1z", "EL1Xi"), False),
            ("values_h", "h", "values", ("L2z", "H1z", "L1Xi"), False)):
        body = [_PGF_HEAD, "\\begin{tikzpicture}\n",
                f"\\begin{{loglogaxis}}[xlabel={{{xcol}}}, legend pos=outer north east]\n"]
        for y in ycols:
            body.append(f"\\addplot table[x={xcol}, y={pre}_{y}] {{{stem}_{table}.dat}};\n")
            body.append(f"\\addlegendentry{{{pre}\\_{y}}}\n")
        if tri:
            body.append(_slope_triangle(h, e))
        body += ["\\end{loglogaxis}\n", "\\end{tikzpicture}\n", _PGF_TAIL]
        path = os.path.join(out, f"{stem}_{name}.tex")
        with open(path, "w") as fh:
            fh.write("".join(body))
        written.append(path)
    return written


def emit_mushy_plot(nfs: list, dt: float, out: str, stem: str) -> list[str]:
    written = []
    for stat in ("Exp", "SD"):
        body = [_PGF_HEAD, "\\begin{tikzpicture}\n",
                f"\\begin{{axis}}[xlabel={{t}}, ylabel={{{stat}-MR}}, legend pos=outer north east]\n"]
        for nf in nfs:
            lab = nf_label(nf)
            body.append(f"\\addplot table[x expr=\\thisrow{{idt}}*{dt:.15g}, "
                        f"y=nf{lab}_{stat}] {{{stem}_mushy.dat}};\n")
            body.append(f"\\addlegendentry{{nf={lab}}}\n")
        body += ["\\end{axis}\n", "\\end{tikzpicture}\n", _PGF_TAIL]
        path = os.path.join(out, f"{stem}_mushy_{stat}.tex")
        with open(path, "w") as fh:
            fh.write("".join(body))
        written.append(path)
    return written


# -- subcommands -------------------------------------------------------------

def cmd_mesh_info(cfg: RunConfig) -> int:
    print("# Size = max cell diameter; nominal = size recorded in the mesh file")
    print(f"{'Mesh':<12} {'Size':>8} {'nominal':>8} {'Nb.Cells':>9} {'Nb.Edges':>9} {'Nb.Vertices':>12}")
    for name in cfg.mesh:
        m = resolve_mesh(name)
        nom = f"{m.nominal_size:.3f}" if m.nominal_size else "-"
        print(f"{m.name or name:<12} {m.size:8.3f} {nom:>8} {m.n_cells:9d} {m.n_edges:9d} "
              f"{m.n_vertices:12d}")
    return EXIT_OK


def sine_phi(p):
    return np.sin(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1])


def sine_phi_grad(p):
    x, y = p[:, 0], p[:, 1]
    return np.pi * np.stack([np.cos(np.pi * x) * np.sin(np.pi * y),
                             np.sin(np.pi * x) * np.cos(np.pi * y)], axis=1)


def swirl_psi(p):
    return np.stack([np.sin(np.pi * p[:, 1]), np.sin(np.pi * p[:, 0])], axis=1)


def swirl_div(p):
    return np.zeros(len(p))


def diagnostics_rows(meshes, scheme: str, r: float = 0.5, T: float = 1.0, test: int = 1) -> list:
    """``(mesh, h, rho, S_D, W_D, dt ||grad_D zeta(I_D phi)||)`` per mesh."""
    zeta = make_model(test).zeta
    rows = []
    for name in meshes:
        mesh = resolve_mesh(name)
        gd = build(scheme, mesh, r=r)
        dt = T / steps_for(mesh.h, T)
        rows.append((mesh.name or name, mesh.h, coercivity_constant(gd),
                     s_defect(gd, sine_phi, sine_phi_grad), w_defect(gd, swirl_psi, swirl_div),
                     dt * gd.grad_norm(zeta(gd.interpolate(sine_phi)))))
    return rows


def cmd_diagnostics(cfg: RunConfig) -> int:
    rows = diagnostics_rows(cfg.mesh, cfg.scheme, cfg.r, cfg.T, cfg.test)
    out = _outdir(cfg.out)
    path = os.path.join(out, f"diagnostics_{cfg.scheme}.dat")
    with open(path, "w") as fh:
        fh.write("mesh h rho S_D W_D dt_grad\n")
        for row in rows:
            fh.write(" ".join([row[0]] + [fmt(v) for v in row[1:]]) + "\n")
    for row in rows:
        print(f"{row[0]:<12} h={row[1]:.4g} rho={row[2]:.6g} S_D={row[3]:.6g} "
              f"W_D={row[4]:.6g} dt_grad={row[5]:.3g}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_run(cfg: RunConfig) -> int:
    if len(cfg.mesh) != 1:
        raise ConfigError("mesh: run takes exactly one mesh")
    if len(cfg.nf) != 1:
        raise ConfigError("nf: run takes a single noise factor")
    name = cfg.mesh[0]
    gd = build(cfg.scheme, resolve_mesh(name), r=cfg.r)
    kw = {"plateau": cfg.plateau} if cfg.plateau else {}
    model = make_model(cfg.test, nf=cfg.nf[0], T=cfg.T, **kw)
    N = steps_for(gd.mesh.h, cfg.T)
    n_max = cfg.n_max or N
    if n_max < N:
        raise ConfigError(f"n_max: {n_max} is coarser than the {N} steps of {name}")
    q = cfg.q()
    basis = sine_basis(len(q))[0] if q else None
    driver = generate(cfg.seed, cfg.path, n_max, cfg.T, q=q, basis=basis)
    scheme = GradientScheme(gd, model, newton=cfg.newton(),
                            condense=cfg.condense and gd.kind == "hmm")
    steps = StepLog()
    res = scheme.run_path(driver, N, [steps])
    out = _outdir(cfg.out)
    stem = os.path.splitext(os.path.basename(name))[0]
    path = os.path.join(out, f"run_T{cfg.test}_{cfg.scheme}_{stem}_nf{nf_label(cfg.nf[0])}_p{cfg.path}.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "energy", "mushy_area", "newton_its", "relaxations"])
        for t, e, a, its, rel in steps.rows:
            w.writerow([fmt(t), fmt(e), fmt(a), its, rel])
    print(f"{N} steps, {res.final.total_iterations} Newton iterations "
          f"({res.mean_iterations:.2f} per step), {res.final.total_relaxations} relaxations")
    print(f"wrote {path}")
    return EXIT_OK


def _ensemble(cfg: RunConfig, levels, reference, nf, observables) -> EnsembleSpec:
    return EnsembleSpec(levels=tuple(levels), test=cfg.test, nf=nf, paths=cfg.paths,
                        seed=cfg.seed, reference=reference, exact_reference=cfg.exact_reference,
                        observables=observables, T=cfg.T, plateau=cfg.plateau, q=cfg.q(),
                        workers=cfg.workers, newton=cfg.newton(), condense=cfg.condense,
                        cache_dir=cfg.cache, n_max=cfg.n_max)


def _save_paths(cfg: RunConfig, spec: EnsembleSpec) -> None:
    if not cfg.save_paths:
        return
    if spec.q:
        raise ConfigError("save_paths: only scalar paths can be saved")
    n_max = spec.finest_steps()
    save_paths(cfg.save_paths, [generate(cfg.seed, p, n_max, cfg.T) for p in range(cfg.paths)])


def cmd_convergence(cfg: RunConfig) -> int:
    meshes = list(cfg.mesh)
    ref = cfg.reference
    if ref is None:
        if len(meshes) < 2:
            raise ConfigError("mesh: convergence needs at least two meshes or a reference")
        ref = meshes.pop()
    levels = [Level(m, cfg.scheme, cfg.r) for m in meshes]
    reference = Level(ref, cfg.scheme, cfg.r)
    out = _outdir(cfg.out)
    for nf in cfg.nf:
        spec = _ensemble(cfg, levels, reference, nf, {"errors", "norms", "energy", "newton"})
        report = run_ensemble(spec)
        stem = f"T{cfg.test}_{scheme_prefix(levels[0])}_nf{nf_label(nf)}"
        files = emit_tables(report, out, stem)
        if cfg.plot:
            files += emit_plots(report, out, stem)
        _save_paths(cfg, spec)
        for lv in report.levels:
            print(f"nf={nf_label(nf)} {lv.level.mesh:<10} h={lv.h:.4g} ndofs={lv.ndofs} "
                  f"E_L2z={lv.errors[0]:.4e} E_H1z={lv.errors[1]:.4e} E_L1Xi={lv.errors[2]:.4e} "
                  f"its/step={lv.mean_iterations:.2f}")
        for f in files:
            print(f"wrote {f}")
    return EXIT_OK


def cmd_mushy(cfg: RunConfig) -> int:
    if cfg.paths < 2:
        raise ConfigError("paths: mushy statistics need at least two paths")
    out = _outdir(cfg.out)
    for name in cfg.mesh:
        level = Level(name, cfg.scheme, cfg.r)
        series = {}
        for nf in cfg.nf:
            spec = _ensemble(cfg, [level], None, nf, {"mushy", "energy", "newton"})
            rep = run_ensemble(spec)
            lv = rep.levels[0]
            series[nf] = (lv.mushy_t, lv.mushy_exp, lv.mushy_sd)
            print(f"{name} nf={nf_label(nf)}: mean Exp-MR {lv.mushy_exp.mean():.4e}, "
                  f"mean SD-MR {lv.mushy_sd.mean():.4e}, its/step {lv.mean_iterations:.2f}")
        stem = f"T{cfg.test}_{scheme_prefix(level)}_{os.path.splitext(os.path.basename(name))[0]}"
        files = [emit_mushy_table(series, out, stem)]
        if cfg.plot:
            files += emit_mushy_plot(list(series), cfg.T / spec.steps(level), out, stem)
        for f in files:
            print(f"wrote {f}")
    return EXIT_OK


COMMANDS = {"mesh-info": cmd_mesh_info, "diagnostics": cmd_diagnostics, "run": cmd_run,
            "convergence": cmd_convergence, "mushy": cmd_mushy}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stefan", description="Stochastic Stefan problem solver")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="flat key = value configuration file")
        s.add_argument("--seed", type=int, help="master seed (overrides the file)")
        s.add_argument("-v", "--verbose", action="store_true")
        s.add_argument("settings", nargs="*", metavar="key=value", help="configuration overrides")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        text = ""
        if args.config:
            try:
                with open(args.config) as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"config: cannot read {args.config!r}: {exc}") from exc
        overrides = {}
        for item in args.settings:
            if "=" not in item:
                raise ConfigError(f"expected key=value, got {item!r}")
            k, v = item.split("=", 1)
            overrides[k.strip()] = v
        if args.seed is not None:
            overrides["seed"] = str(args.seed)
        cfg = parse_config(text, overrides, subcommand=args.command)
        return COMMANDS[args.command](cfg)
    except (NewtonError, LinearSolveError, EmptyReportError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        # ConfigError, MeshError and invalid ensemble settings are all ValueErrors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
