"""Command-line front end: ``obsv check|trap|synth|simulate|verify``."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys as _sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import fixtures, model, sim, synth, trapping
from .errors import (
    DimensionMismatch,
    EmptySubspace,
    Infeasible,
    NonFinite,
    NumericalTrouble,
    ObsvError,
    ParseError,
)
from .lmi import Ball1, Ball2, Polytope
from .serialize import atomic_write_text, to_jsonable

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_INFEASIBLE = 3
EXIT_BLOWUP = 4
EXIT_VERIFY = 5

log = logging.getLogger("obsv")


class Run:
    """Output directory bookkeeping: artifacts plus a manifest with checksums."""

    def __init__(self, args):
        self.args = args
        self.out = Path(args.out) if args.out else None
        self.files = {}

    def write_json(self, name, obj):
        return self.write_text(name, json.dumps(to_jsonable(obj), indent=1) + "\n")

    def write_text(self, name, text):
        if self.out is None:
            return None
        path = self.out / name
        atomic_write_text(path, text)
        self.files[name] = hashlib.sha256(text.encode()).hexdigest()
        return path

    def register(self, path):
        if self.out is not None:
            p = Path(path)
            self.files[str(p.relative_to(self.out))] = hashlib.sha256(p.read_bytes()).hexdigest()

    def finish(self, status):
        if self.out is None:
            return
        config = {k: v for k, v in vars(self.args).items() if k != "func"}
        manifest = {
            "config": config,
            "exit_status": status,
            "versions": _versions(),
            "files": dict(sorted(self.files.items())),
        }
        atomic_write_text(self.out / "manifest.json", json.dumps(to_jsonable(manifest), indent=1) + "\n")


def _versions():
    out = {"python": platform.python_version()}
    for dist in ("artifact", "numpy", "scipy", "cvxpy", "clarabel"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            pass
    return out


# --- argument parsing helpers ------------------------------------------------


def _floats(text, what):
    try:
        return np.array([float(v) for v in text.split(",") if v.strip() != ""], dtype=float)
    except ValueError:
        raise ParseError(f"cannot parse {what} from {text!r}") from None


def parse_region(spec, n):
    """``ball:R@c1,..,cn``, ``l1:R@c1,..,cn`` or ``poly:FILE``."""
    kind, _, rest = spec.partition(":")
    if kind in ("ball", "l1"):
        rad, at, cen = rest.partition("@")
        if not at:
            raise ParseError(f"region {spec!r} lacks '@center'")
        try:
            r = float(rad)
        except ValueError:
            raise ParseError(f"bad radius in region {spec!r}") from None
        c = _floats(cen, "region center")
        if c.shape != (n,):
            raise ParseError(f"region center has {c.size} entries, model has n = {n}")
        if r < 0:
            raise ParseError("region radius must be nonnegative")
        return Ball2(c, r) if kind == "ball" else Ball1(c, r)
    if kind == "poly":
        path = Path(rest)
        if not path.exists():
            raise ParseError(f"polytope file {rest!r} not found")
        if path.suffix == ".json":
            doc = json.loads(path.read_text())
            Y = Polytope(doc.get("vertices"), doc.get("F"), doc.get("g"))
        else:
            Y = Polytope(np.loadtxt(path, delimiter=",", ndmin=2))
        if Y.n != n:
            raise ParseError(f"polytope lives in dimension {Y.n}, model has n = {n}")
        return Y
    raise ParseError(f"unknown region kind {kind!r} (use ball, l1 or poly)")


def parse_kerq(spec, n):
    """``e2,e3`` (1-based unit vectors) or ``auto``."""
    if spec is None or spec == "auto":
        return None
    idx = []
    for tok in spec.split(","):
        tok = tok.strip()
        if not tok.startswith("e") or not tok[1:].isdigit():
            raise ParseError(f"bad --kerq entry {tok!r}; expected e1..e{n}")
        i = int(tok[1:])
        if not 1 <= i <= n:
            raise ParseError(f"--kerq index {i} out of range 1..{n}")
        idx.append(i - 1)
    return model.basis_vectors(n, idx)


def parse_matrix(text, rows=None, cols=None, what="matrix"):
    """``a,b;c,d`` rows, or ``diag:a,b,c``."""
    if text.startswith("diag:"):
        M = np.diag(_floats(text[5:], what))
    else:
        M = np.array([_floats(r, what) for r in text.split(";")], dtype=float)
        if M.ndim != 2:
            raise ParseError(f"ragged {what}")
    if rows is not None and cols is not None and M.shape != (rows, cols):
        if M.shape == (1, rows) and cols == 1:
            M = M.T  # a single row given for a column gain
        else:
            raise ParseError(f"{what} has shape {M.shape}, expected ({rows}, {cols})")
    return M


def load_any_model(args):
    if args.model and args.fixture:
        raise ParseError("give either --model or --fixture, not both")
    if args.fixture:
        if args.fixture not in fixtures.FIXTURES:
            raise ParseError(f"unknown fixture {args.fixture!r}; choose from {', '.join(fixtures.FIXTURES)}")
        return fixtures.load_fixture(args.fixture)
    if args.model:
        path = Path(args.model)
        if not path.exists():
            raise ParseError(f"model file {args.model!r} not found")
        return model.load_model(path)
    raise ParseError("a model is required: --fixture NAME or --model FILE")


def as_system(m):
    return model.fluid_to_system(m) if isinstance(m, model.FluidModel) else m


def _q_from(sys, spec):
    B = parse_kerq(spec, sys.n)
    kq = model.kernel_Q(sys, B)
    if not kq.valid:
        raise ParseError("N(d)d does not vanish on the requested subspace")
    return kq.Q


def _vec(a):
    return "(" + ", ".join(f"{v:.6g}" for v in np.ravel(a)) + ")"


# --- subcommands ---------------------------------------------------------------


def cmd_check(args, run):
    m = load_any_model(args)
    sys = as_system(m)
    rng = np.random.default_rng(args.seed)
    xs = rng.standard_normal((1000, sys.n))
    resid = float(np.abs(np.einsum("si,si->s", xs, sys.nonlinear(xs))).max())
    gamma = model.n_norm(sys)
    sn = model.sn_basis(sys)
    print(f"model: {'fluid' if isinstance(m, model.FluidModel) else 'quad'}  n = {sys.n}  p = {sys.p}")
    print(f"energy check: pass (max |x'N(x)x| over 1000 samples = {resid:.2e})")
    print(f"gamma = {gamma:.10g}")
    print(f"dim S_N = {sn.dim}")
    run.write_json("check.json", {"n": sys.n, "p": sys.p, "gamma": gamma, "sn_dim": sn.dim, "energy_residual": resid})
    return EXIT_OK


def cmd_trap(args, run):
    m = load_any_model(args)
    sys = as_system(m)
    if args.fluid:
        if not isinstance(m, model.FluidModel):
            raise ParseError("--fluid needs a fluid model")
        cert = trapping.fluid_trap(m)
    else:
        try:
            Q = _q_from(sys, args.kerq)
        except EmptySubspace as exc:
            raise ParseError(f"{exc}; pass --kerq to choose a subspace") from None
        cert = trapping.state_trap_sdp(sys, Q, solver=args.solver)
    if cert.kind is trapping.Kind.DEGENERATE:
        print("Degenerate: A + A' < 0, so every ball centred at the origin is invariant")
    print(f"kind = {cert.kind.value}")
    print(f"radius = {cert.ball.r:.10g}")
    print(f"center = {_vec(cert.ball.center)}")
    print(f"alpha = {cert.alpha:.6g}")
    run.write_json("trap.json", cert.to_dict())
    return EXIT_OK


def cmd_synth(args, run):
    m = load_any_model(args)
    sys = as_system(m)
    if not args.Y:
        raise ParseError("--Y is required for synthesis")
    Y = parse_region(args.Y, sys.n)
    status = EXIT_OK
    extra = {}
    if args.method == "global":
        cert = None
        if args.kerq:
            cert = trapping.state_trap_sdp(sys, _q_from(sys, args.kerq), solver=args.solver)
            run.write_json("state_trap.json", cert.to_dict())
        design = synth.global_synth(sys, Y, cert, pcap=args.pcap, solver=args.solver)
    else:
        iters = args.iters if args.method == "local" else args.max_iter
        if args.method == "local" and iters == 0:
            design = synth.local_synth(sys, Y, args.alpha1, args.alpha2, solver=args.solver)
        else:
            try:
                Q = _q_from(sys, args.kerq)
            except EmptySubspace as exc:
                raise ParseError(f"{exc}; pass --kerq to choose a subspace") from None
            init = synth.alg1(sys, Q, Y, args.alpha1, args.alpha2, strict=False)
            run.write_json("state_trap.json", init.state_cert.to_dict())
            seq = synth.alg2_iterate(
                init,
                max_iter=iters,
                pcap=args.pcap,
                tie_break=args.tie_break,
                stop_on_inclusion=args.method == "iterative",
                gain_bound=args.gain_bound,
                solver=args.solver,
            )
            last = seq[-1]
            for st in seq:
                ball = "none" if st.obs_ball is None else f"r = {st.obs_ball.r:.6g} at {_vec(st.obs_ball.center)}"
                bound = "" if st.k == 0 else f"  ||LC|| = {np.linalg.norm(st.L @ sys.C, 2):.4g}  beta/alpha = {st.beta / st.alpha:.4g}"
                print(f"iter {st.k}: alpha = {st.alpha:.4g}  beta = {st.beta:.4g}{bound}  observer ball {ball}  inclusion = {st.inclusion_satisfied}")
            design = synth.design_from_state(sys, last, Y)
            if args.method == "local":
                design = synth.ObserverDesign(
                    design.L, design.P, Y, design.margins, design.gamma, synth.Method.LOCAL, design.convergence_radius, design.info
                )
            if last.obs_cert is not None:
                run.write_json("observer_trap.json", last.obs_cert.to_dict())
            extra = {"inclusion": last.inclusion_satisfied, "iterations": last.k}
            if args.method == "iterative" and not last.inclusion_satisfied:
                print("inclusion test not satisfied within the iteration budget")
                status = EXIT_VERIFY
            if design.margins[2] <= 0:
                print("final pair is not certified on the region")
                status = EXIT_VERIFY
    print(f"method = {design.method.value}")
    print(f"L = {np.array2string(design.L.ravel(), precision=6)}")
    print(f"P = {np.array2string(design.P, precision=6)}")
    print(f"margins (alpha1, alpha2, alpha3) = {_vec(design.margins)}")
    print(f"convergence radius = {design.convergence_radius:.6g}")
    run.write_json("design.json", dict(design.to_dict(), **extra))
    return status


def cmd_simulate(args, run):
    m = load_any_model(args)
    sys = as_system(m)
    x0 = _floats(args.x0, "--x0")
    if x0.shape != (sys.n,):
        raise ParseError(f"--x0 needs {sys.n} entries")
    L = None
    if args.design:
        design = synth.ObserverDesign.from_dict(json.loads(Path(args.design).read_text()))
        L = design.L
    elif args.L:
        L = parse_matrix(args.L, sys.n, sys.p, "L")
    if L is not None:
        xh0 = np.zeros(sys.n) if args.xhat0 is None else _floats(args.xhat0, "--xhat0")
        if xh0.shape != (sys.n,):
            raise ParseError(f"--xhat0 needs {sys.n} entries")
        tr = sim.integrate_observer(sys, L, x0, xh0, args.t_end, args.dt, record_every=args.every)
        print(f"err2(0) = {tr.err2[0]:.6g}  err2({tr.t[-1]:g}) = {tr.err2[-1]:.6g}")
    else:
        tr = sim.integrate(sys, x0, args.t_end, args.dt, record_every=args.every)
        print(f"x({tr.t[-1]:g}) = {_vec(tr.X[-1])}")
    if run.out is not None:
        path = sim.export_csv(tr, run.out / "trace.csv", plot_script=True)
        run.register(path)
        run.register(path.with_suffix(".gp"))
    return EXIT_OK


def cmd_verify(args, run):
    m = load_any_model(args)
    sys = as_system(m)
    if args.design:
        design = synth.ObserverDesign.from_dict(json.loads(Path(args.design).read_text()))
        L, P, Y = design.L, design.P, design.region
    else:
        if not (args.L and args.P):
            raise ParseError("verify needs --design or both --L and --P")
        L = parse_matrix(args.L, sys.n, sys.p, "L")
        P = parse_matrix(args.P, sys.n, sys.n, "P")
        Y = None
    if args.Y:
        Y = parse_region(args.Y, sys.n)
    if Y is None:
        raise ParseError("--Y is required")
    if np.linalg.eigvalsh((P + P.T) / 2)[0] <= 0:
        raise ParseError("P must be positive definite")
    margin = synth.verify_design(sys, L, P, Y, solver=args.solver)
    sampled = synth.sampled_margin(sys, L, P, Y, m=args.samples, seed=args.seed)
    # the certified margin is a lower bound for every sampled one
    if margin > 0:
        note = "consistent" if sampled >= margin - 1e-6 else "INCONSISTENT"
    else:
        note = "not certified"
    print(f"certified margin m = {margin:.6g}")
    print(f"sampled margin over {args.samples} points = {sampled:.6g} ({note})")
    run.write_json("verify.json", {"margin": margin, "sampled_margin": sampled, "samples": args.samples})
    return EXIT_OK if margin > 0 else EXIT_VERIFY


# --- entry point ---------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_argument_group("model")
    src.add_argument("--fixture", help=f"shipped model: {', '.join(fixtures.FIXTURES)}")
    src.add_argument("--model", help="model file (JSON)")
    common.add_argument("--out", help="directory for artifacts and the run manifest")
    common.add_argument("--seed", type=int, default=0, help="seed for sampling checks")
    common.add_argument("--solver", default=None, help="cvxpy solver name (default CLARABEL)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="obsv", description="Observer design for systems with energy-preserving quadratic terms.")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", parents=[common], help="validate a model, print gamma and dim S_N")
    c.set_defaults(func=cmd_check)

    t = sub.add_parser("trap", parents=[common], help="smallest certified invariant ball for the state")
    t.add_argument("--kerq", help="centre subspace as unit vectors, e.g. e2,e3 (default: automatic)")
    t.add_argument("--fluid", action="store_true", help="use the ellipsoid construction for fluid models")
    t.set_defaults(func=cmd_trap)

    s = sub.add_parser("synth", parents=[common], help="synthesize an observer gain")
    s.add_argument("--method", choices=["local", "global", "iterative"], required=True)
    s.add_argument("--Y", help="region: ball:R@c1,..,cn | l1:R@c1,..,cn | poly:FILE")
    s.add_argument("--kerq", help="centre subspace for the trapping balls")
    s.add_argument("--pcap", type=float, default=synth.PCAP_DEFAULT, help="cap P <= pcap I")
    s.add_argument("--alpha1", type=float, default=synth.ALPHA1_DEFAULT)
    s.add_argument("--alpha2", type=float, default=synth.ALPHA2_DEFAULT)
    s.add_argument("--max-iter", type=int, default=10, help="iteration budget for --method iterative")
    s.add_argument("--iters", type=int, default=0, help="refinement iterations after a local design")
    s.add_argument("--tie-break", action="store_true", help="minimize ||L|| among minimal-beta gains")
    s.add_argument("--gain-bound", choices=["literal", "scaled"], default="literal")
    s.set_defaults(func=cmd_synth)

    m = sub.add_parser("simulate", parents=[common], help="RK4 simulation of plant and observer")
    m.add_argument("--design", help="design file written by synth")
    m.add_argument("--L", help="gain as rows 'a,b;c,d' (a single row is read as a column)")
    m.add_argument("--x0", required=True)
    m.add_argument("--xhat0")
    m.add_argument("--t-end", type=float, default=10.0)
    m.add_argument("--dt", type=float, default=sim.DT_DEFAULT)
    m.add_argument("--every", type=int, default=1, help="record every k-th step")
    m.set_defaults(func=cmd_simulate)

    v = sub.add_parser("verify", parents=[common], help="certify a given (L, P) pair on a region")
    v.add_argument("--design")
    v.add_argument("--L")
    v.add_argument("--P", help="'diag:a,b,c' or rows 'a,b;c,d'")
    v.add_argument("--Y")
    v.add_argument("--samples", type=int, default=10_000)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    run = Run(args)
    try:
        status = args.func(args, run)
    except (ParseError, DimensionMismatch, EmptySubspace, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        status = EXIT_PARSE
    except Infeasible as exc:
        print(f"infeasible: {exc}", file=_sys.stderr)
        status = EXIT_INFEASIBLE
    except NumericalTrouble as exc:
        print(f"numerical trouble: {exc}", file=_sys.stderr)
        status = EXIT_INFEASIBLE
    except NonFinite as exc:
        print(f"simulation blew up: {exc}", file=_sys.stderr)
        status = EXIT_BLOWUP
    except ObsvError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        status = EXIT_PARSE
    run.finish(status)
    return status


if __name__ == "__main__":
    raise SystemExit(main())
