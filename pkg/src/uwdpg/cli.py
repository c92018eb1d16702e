"""Command-line drivers: one-level-study, mg-study, adaptive, interp-norm, dump-system.

Settings come from an optional ``key=value`` file (``--config``) and are
overridden by flags.  Recognised keys: p, delta_p, omega, h_list, H, theta,
nu, tol, tol_mode, max_iter, theta_mark, max_generations, r_ext, output_dir.
Lists are comma separated; frequencies accept multiples of pi such as
``pi``, ``2pi`` or ``0.5pi``; sizes accept fractions such as ``1/16``.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

log = logging.getLogger("uwdpg")

UNRESOLVED_ERROR = 0.9

DEFAULTS = {
    "p": "2",
    "delta_p": "2",
    "omega": "pi,2pi,4pi,8pi,16pi",
    "h_list": "1/2,1/4,1/8,1/16,1/32",
    "H": "1/2",
    "theta": None,  # command specific
    "nu": "10",
    "tol": "1e-6",
    "tol_mode": None,  # command specific
    "max_iter": "500",
    "theta_mark": "0.5",
    "max_generations": "12",
    "r_ext": None,
    "output_dir": "out",
}


# -- parsing helpers -------------------------------------------------------------


def parse_omega(text):
    """``"2pi"`` -> 2*pi, ``"pi"`` -> pi, ``"6.5"`` -> 6.5."""
    t = text.strip().lower().replace("π", "pi").replace("*", "")
    if t.endswith("pi"):
        coef = t[:-2]
        return (float(Fraction(coef)) if coef else 1.0) * math.pi
    return float(t)


def omega_label(w):
    k = w / math.pi
    if abs(k - round(k)) < 1e-12:
        k = int(round(k))
        return "pi" if k == 1 else f"{k}pi"
    return f"{w:g}"


def parse_size(text):
    return float(Fraction(text.strip()))


def size_label(h):
    f = Fraction(h).limit_denominator(1 << 20)
    return f"{f.numerator}/{f.denominator}" if f.denominator != 1 else str(f.numerator)


def split_list(text, conv):
    return [conv(t) for t in str(text).split(",") if t.strip()]


def read_config(path):
    """``key=value`` lines; ``#`` starts a comment."""
    cfg = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        cfg[key] = value
    return cfg


def settings(args, command_defaults):
    cfg = dict(DEFAULTS)
    cfg.update({k: v for k, v in command_defaults.items()})
    if args.config:
        cfg.update(read_config(args.config))
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = str(val)
    return cfg


def write_output(cfg, name, text):
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    log.info("wrote %s", path)
    return path


def _csv(rows):
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


# -- commands --------------------------------------------------------------------


def one_level_cell(p, dp, omega, h, tol, max_iter, theta=1.0, absolute=True, H=0.5):
    """Iterations and field error of one cell of the one-level study."""
    from .krylov import pcg
    from .mesh import uniform_hierarchy
    from .precond import one_level_preconditioner
    from .system import Problem, build_system, field_error

    n, n_coarse = round(1 / h), round(1 / H)
    mesh = uniform_hierarchy(n_coarse, n)
    system = build_system(mesh, Problem.plane_wave(omega, p=p, dp=dp))
    pc = one_level_preconditioner(system, 0, theta)
    x, rep = pcg(system.S, pc.as_preconditioner(), system.rhs, tol=tol, max_iter=max_iter,
                 absolute=absolute)
    if not rep.converged:
        raise RuntimeError(f"PCG did not converge in {max_iter} iterations")
    return rep.iterations, field_error(system, x)


def cmd_one_level_study(cfg):
    ps = split_list(cfg["p"], int)
    omegas = split_list(cfg["omega"], parse_omega)
    hs = split_list(cfg["h_list"], parse_size)
    H = split_list(cfg["H"], parse_size)[0]
    theta = float(cfg["theta"])
    absolute = cfg["tol_mode"] == "absolute"
    failed = 0
    for p in ps:
        head = [f"p={p} h\\omega"] + [omega_label(w) for w in omegas]
        its, errs = [head], [head]
        for h in hs:
            r_it, r_err = [size_label(h)], [size_label(h)]
            for w in omegas:
                t0 = time.time()
                try:
                    k, e = one_level_cell(p, int(cfg["delta_p"]), w, h, float(cfg["tol"]),
                                          int(cfg["max_iter"]), theta, absolute, H)
                except Exception as exc:  # noqa: BLE001 - sweep continues
                    log.error("p=%d h=%s omega=%s failed: %s", p, size_label(h),
                              omega_label(w), exc)
                    failed += 1
                    r_it.append("fail")
                    r_err.append("fail")
                    continue
                flag = "*" if e > UNRESOLVED_ERROR else ""
                r_it.append(f"{k}{flag}")
                r_err.append(f"{e:.4e}")
                log.info("p=%d h=%s omega=%s: %d iterations, error %.3e (%.1fs)", p,
                         size_label(h), omega_label(w), k, e, time.time() - t0)
            its.append(r_it)
            errs.append(r_err)
        text = _csv(its)
        sys.stdout.write(text)
        write_output(cfg, f"one_level_p{p}_iterations.csv", text)
        write_output(cfg, f"one_level_p{p}_errors.csv", _csv(errs))
    return failed


def mg_cell(p, dp, omega, h, H, theta, nu, tol, max_iter, absolute=False):
    from .krylov import pcg
    from .mesh import uniform_hierarchy
    from .precond import build_hierarchy
    from .system import Problem

    mesh = uniform_hierarchy(round(1 / H), round(1 / h))
    hier = build_hierarchy(mesh, Problem.plane_wave(omega, p=p, dp=dp), theta=theta, nu=nu)
    system = hier.levels[-1].system
    x, rep = pcg(system.S, hier.vcycle, system.rhs, tol=tol, max_iter=max_iter,
                 absolute=absolute)
    if not rep.converged:
        raise RuntimeError(f"PCG did not converge in {max_iter} iterations")
    return rep.iterations


def cmd_mg_study(cfg):
    p = split_list(cfg["p"], int)[0]
    omegas = split_list(cfg["omega"], parse_omega)
    hs = split_list(cfg["h_list"], parse_size)
    Hs = split_list(cfg["H"], parse_size)
    failed = 0
    for w in omegas:
        rows = [[f"p={p} omega={omega_label(w)} h\\H"] + [size_label(H) for H in Hs]]
        for h in hs:
            row = [size_label(h)]
            for H in Hs:
                if h > H:
                    row.append("")
                    continue
                try:
                    row.append(str(mg_cell(p, int(cfg["delta_p"]), w, h, H, float(cfg["theta"]),
                                           int(cfg["nu"]), float(cfg["tol"]),
                                           int(cfg["max_iter"]),
                                           cfg["tol_mode"] == "absolute")))
                except Exception as exc:  # noqa: BLE001 - sweep continues
                    log.error("h=%s H=%s failed: %s", size_label(h), size_label(H), exc)
                    failed += 1
                    row.append("fail")
            rows.append(row)
        text = _csv(rows)
        sys.stdout.write(text)
        write_output(cfg, f"mg_p{p}_omega{omega_label(w)}.csv", text)
    return failed


def cmd_adaptive(cfg):
    from .adapt import AdaptError, adaptive_solve, write_history
    from .mesh import uniform_mesh
    from .system import Problem

    p = split_list(cfg["p"], int)[0]
    w = split_list(cfg["omega"], parse_omega)[0]
    h0 = split_list(cfg["h_list"], parse_size)[0]
    problem = Problem.plane_wave(w, p=p, dp=int(cfg["delta_p"]))
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)

    def snapshot(gen):
        (out / f"adaptive_gen{gen.index:02d}.svg").write_text(gen.mesh.to_svg(gen.indicators))

    try:
        gens = adaptive_solve(problem, uniform_mesh(round(1 / h0)),
                              theta_mark=float(cfg["theta_mark"]),
                              max_generations=int(cfg["max_generations"]),
                              tol=float(cfg["tol"]), max_iter=int(cfg["max_iter"]),
                              theta=float(cfg["theta"]), nu=int(cfg["nu"]), callback=snapshot)
    except AdaptError as exc:
        log.error("%s", exc)
        return 1
    path = out / "adaptive.csv"
    write_history(gens, path)
    sys.stdout.write(path.read_text())
    return 0


def cmd_interp_norm(cfg):
    from .interpnorm import TABLE_EXTENSION_ORDER, InterpNormError, table_csv

    r_ext = int(cfg["r_ext"]) if cfg["r_ext"] else TABLE_EXTENSION_ORDER
    omegas = split_list(cfg["omega"], parse_omega)
    hs = split_list(cfg["h_list"], parse_size)
    failed = 0
    for p in split_list(cfg["p"], int):
        try:
            text = table_csv(p, hs, omegas, max(r_ext, p + 1),
                             [omega_label(w) for w in omegas], [size_label(h) for h in hs])
        except InterpNormError as exc:
            log.error("p=%d failed: %s", p, exc)
            failed += 1
            continue
        sys.stdout.write(text)
        write_output(cfg, f"interp_norm_p{p}.csv", text)
    return failed


def cmd_dump_system(cfg):
    from .mesh import uniform_mesh
    from .system import Problem, build_system

    p = split_list(cfg["p"], int)[0]
    w = split_list(cfg["omega"], parse_omega)[0]
    h = split_list(cfg["h_list"], parse_size)[0]
    system = build_system(uniform_mesh(round(1 / h)),
                          Problem.plane_wave(w, p=p, dp=int(cfg["delta_p"])))
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    stem = f"system_p{p}_h{round(1 / h)}_omega{omega_label(w)}"
    system.dump(out / f"{stem}.mtx", out / f"{stem}_rhs.mtx")
    print(f"{system.n_dofs} dofs, {system.S.nnz} nonzeros -> {out / stem}.mtx")
    return 0


COMMANDS = {
    "one-level-study": (cmd_one_level_study, {"theta": "1", "tol_mode": "absolute"}),
    "mg-study": (cmd_mg_study, {"theta": "0.25", "tol_mode": "relative", "omega": "2pi",
                                "h_list": "1/8,1/16,1/32", "H": "1/2,1/4,1/8"}),
    "adaptive": (cmd_adaptive, {"theta": "0.25", "tol_mode": "relative", "omega": "4pi",
                                "h_list": "1/4"}),
    "interp-norm": (cmd_interp_norm, {}),
    "dump-system": (cmd_dump_system, {"omega": "2pi", "h_list": "1/4"}),
}


def build_parser():
    ap = argparse.ArgumentParser(prog="uwdpg", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="key=value settings file")
        sp.add_argument("--p", help="polynomial order(s), e.g. 2,4,6")
        sp.add_argument("--delta-p", dest="delta_p", help="test enrichment")
        sp.add_argument("--omega", help="frequencies, e.g. pi,2pi")
        sp.add_argument("--h-list", dest="h_list", help="mesh sizes, e.g. 1/2,1/4")
        sp.add_argument("--H", help="coarse size(s)")
        sp.add_argument("--theta", help="smoother relaxation")
        sp.add_argument("--nu", help="smoothing steps")
        sp.add_argument("--tol", help="PCG tolerance")
        sp.add_argument("--tol-mode", dest="tol_mode", choices=["relative", "absolute"])
        sp.add_argument("--max-iter", dest="max_iter")
        sp.add_argument("--theta-mark", dest="theta_mark")
        sp.add_argument("--max-generations", dest="max_generations")
        sp.add_argument("--r-ext", dest="r_ext", help="extension order (interp-norm)")
        sp.add_argument("--output-dir", dest="output_dir")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s")
    fn, defaults = COMMANDS[args.command]
    cfg = settings(args, defaults)
    failed = fn(cfg)
    if failed:
        log.error("%d cell(s) failed", failed)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
