"""Command-line front end.

Subcommands ``cell``, ``interface``, ``rates``, ``green`` and ``all`` read a
YAML config (optional), apply ``key=value`` overrides with dotted keys and
write JSON/CSV reports plus a manifest into the output directory.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical
diagnostic failure.
"""

import argparse
import copy
import hashlib
import json
import os
import pickle
import platform
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .coeff import build_family
from .errors import ConfigError, DiagnosticError

DEFAULTS = {
    "family": {"name": "interface", "d": 2},
    "grid": {"n_cell": 16, "L": 8, "margin": 3.0, "scale": 1.0, "weighted_theta": True},
    "solver": {"tol": 1e-10},
    "cell": {"n_cell": 32},
    "rates": {"eps_list": [0.125, 0.0625, 0.03125, 0.015625], "refine": 16,
              "interior": 0.5, "richardson": True, "interior_only": False, "strict": False},
    "green": {"d": 3, "eps": 0.125, "h": 0.015625, "source": [0.0, 0.5, 0.5], "shells": 3,
              "laplace": False, "L": 8},
    "output": {"dir": "homoglab-out"},
}

CACHE_FORMAT = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write("%s: error: %s\n" % (self.prog, message))
        sys.exit(1)


# ---------------------------------------------------------------- configuration

def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in (extra or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def apply_override(cfg, item):
    """Set ``a.b.c=value``; the value is parsed as YAML (numbers, lists, booleans)."""
    if "=" not in item:
        raise ConfigError("override %r is not of the form key=value" % (item,))
    key, raw = item.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError("empty override key in %r" % (item,))
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError("cannot parse override value %r: %s" % (raw, exc))
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p, {}), dict):
            raise ConfigError("override %r descends into a non-section" % (key,))
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return cfg


def load_config(path=None, overrides=()):
    """Defaults, then the YAML file, then the overrides (which win)."""
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError("cannot read config %s: %s" % (path, exc))
        except yaml.YAMLError as exc:
            raise ConfigError("cannot parse config %s: %s" % (path, exc))
        if not isinstance(data, dict):
            raise ConfigError("config root must be a mapping")
        cfg = _merge(cfg, data)
    for item in overrides:
        apply_override(cfg, item)
    return cfg


def _num(cfg, section, key, kind=float):
    try:
        return kind(cfg[section][key])
    except (KeyError, TypeError, ValueError):
        raise ConfigError("%s.%s must be a %s" % (section, key, kind.__name__))


# ---------------------------------------------------------------- cache

def cache_dir():
    env = os.environ.get("HOMOGLAB_CACHE_DIR")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "homoglab"


def content_hash(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _interface_key(cfg, n_cell, L):
    g = cfg["grid"]
    return {"format": CACHE_FORMAT, "version": __version__, "family": cfg["family"],
            "n_cell": int(n_cell), "L": int(L), "margin": float(g["margin"]),
            "scale": float(g["scale"]), "weighted_theta": bool(g["weighted_theta"]),
            "tol": float(cfg["solver"]["tol"])}


def cached_interface(cfg, n_cell, L, policy="use", full=True):
    """Interface data from the cache, keyed by the resolved family and grid."""
    from .harness import prepare_interface
    key = _interface_key(cfg, n_cell, L)
    key["full"] = bool(full)
    digest = content_hash(key)
    path = cache_dir() / ("interface-%s.pkl" % digest)
    if policy == "use" and path.exists():
        try:
            with open(path, "rb") as fh:
                stored = pickle.load(fh)
            if stored.get("key") == key:
                return stored["data"], digest, True
        except (OSError, pickle.PickleError, EOFError, AttributeError):
            pass
    cs = build_family(cfg["family"])
    g = cfg["grid"]
    data = prepare_interface(cs, int(L), int(n_cell), float(g["scale"]), float(g["margin"]),
                             bool(g["weighted_theta"]), float(cfg["solver"]["tol"]), full=full)
    if policy != "off":
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            with open(tmp, "wb") as fh:
                pickle.dump({"key": key, "data": data}, fh, protocol=pickle.HIGHEST_PROTOCOL)
            os.replace(tmp, path)
        except OSError:
            pass
    return data, digest, False


# ---------------------------------------------------------------- output

def _clean(obj):
    """JSON-ready copy without wall-clock timings, so reports are reproducible."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items() if k not in ("seconds", "timings")}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def write_json(path, obj):
    text = json.dumps(_clean(obj), indent=2, ensure_ascii=False) + "\n"
    Path(path).write_text(text, encoding="utf-8")
    return path


class Outputs:
    """Serialised writer that records every file for the manifest."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files = []
        self.cache = {}

    def json(self, name, obj):
        self.files.append(name)
        return write_json(self.root / name, obj)

    def text(self, name, text):
        self.files.append(name)
        (self.root / name).write_text(text, encoding="utf-8")

    def manifest(self, cmd, cfg, grids, status, extra=None):
        import scipy
        versions = {"homoglab": __version__, "python": platform.python_version(),
                    "numpy": np.__version__, "scipy": scipy.__version__,
                    "pyyaml": yaml.__version__}
        try:
            import pyamg
            versions["pyamg"] = pyamg.__version__
        except ImportError:
            pass
        files = {}
        for name in self.files:
            files[name] = hashlib.sha256((self.root / name).read_bytes()).hexdigest()
        body = {"command": cmd, "status": status, "config": cfg, "config_hash": content_hash(cfg),
                "versions": versions, "grids": grids, "files": files, "cache": self.cache}
        if extra:
            body.update(extra)
        write_json(self.root / "manifest.json", body)


# ---------------------------------------------------------------- commands

def cmd_cell(cfg, out, args):
    from .harness import cell_tensors
    n = _num(cfg, "cell", "n_cell", int)
    cs = build_family(cfg["family"])
    rep = cell_tensors(cs, n, float(cfg["solver"]["tol"]))
    out.json("cell.json", rep)
    return rep, {"cell": {"d": cs.d, "n_cell": n}}


def cmd_interface(cfg, out, args):
    n = _num(cfg, "grid", "n_cell", int)
    L = _num(cfg, "grid", "L", int)
    data, digest, hit = cached_interface(cfg, n, L, args.cache)
    rep = data.report()
    out.json("interface.json", rep)
    out.cache["interface"] = {"key": digest, "hit": hit}
    return rep, {"cylinder": {"d": data.d, "n_cell": n, "L": L,
                              "measure_nodes": int((4 * L * n + 1) * n ** (data.d - 1)),
                              "truncated_nodes": int(data.tgrid.n_nodes)}}


def _rate_spec(cfg):
    from .harness import ExperimentSpec
    r = cfg["rates"]
    g = cfg["grid"]
    eps = r.get("eps_list")
    if not isinstance(eps, (list, tuple)) or not eps:
        raise ConfigError("rates.eps_list must be a non-empty list")
    try:
        eps = [float(e) for e in eps]
    except (TypeError, ValueError):
        raise ConfigError("rates.eps_list must hold numbers")
    spec = ExperimentSpec(family=cfg["family"], eps_list=eps, refine=_num(cfg, "rates", "refine", int),
                          L=_num(cfg, "grid", "L", int), margin=float(g["margin"]),
                          interior=float(r["interior"]), tol=min(1e-9, float(cfg["solver"]["tol"]) * 10),
                          weighted_theta=bool(g["weighted_theta"]),
                          richardson=bool(r["richardson"]), strict=bool(r.get("strict", False)),
                          scale=float(g["scale"]), interior_only=bool(r.get("interior_only", False)))
    return spec.validate()


def cmd_rates(cfg, out, args):
    from .harness import rate_study
    spec = _rate_spec(cfg)
    data, digest, hit = cached_interface(cfg, spec.refine, spec.L, args.cache, full=False)
    rep = rate_study(spec, data=data, jobs=args.jobs)
    summary = rep.summary()
    out.cache["rates"] = {"key": digest, "hit": hit}
    out.text("rates.csv", rep.csv())
    for col in ("l2_err", "linf_err", "h1_w_err", "interior_l2_err"):
        out.text("plot_%s.dat" % col, rep.plot_data(col))
    out.json("rates.json", summary)
    grids = {"box": [{"epsilon": r["epsilon"], "h": r["solve"]["h"], "nodes": r["solve"]["nodes"]}
                     for r in rep.rows]}
    status = "pass" if rep.passed else "fail"
    return summary, grids, status


def cmd_green(cfg, out, args):
    from .harness import green_probe
    gc = cfg["green"]
    d = int(gc.get("d", cfg["family"].get("d", 2)))
    if d != 3:
        raise ConfigError("the Green probe needs green.d = 3")
    eps = float(gc["eps"])
    h = float(gc["h"])
    n_cell = int(round(eps / h))
    if abs(n_cell * h - eps) > 1e-12:
        raise ConfigError("green.eps must be an integer multiple of green.h")
    data = None
    key = None
    if not gc.get("laplace", False):
        fam = dict(cfg["family"])
        fam["d"] = 3
        c3 = dict(cfg)
        c3["family"] = fam
        data, key, _ = cached_interface(c3, n_cell, int(gc.get("L", 8)), args.cache, full=False)
    rep = green_probe(data, eps, h, tuple(gc["source"]), int(gc["shells"]),
                      laplace=bool(gc.get("laplace", False)), tol=float(cfg["solver"]["tol"]))
    lo, hi = (-2.5, -1.6)
    rep["checks"] = {"grad_exponent_band": [lo, hi],
                     "grad_exponent_pass": bool(lo <= rep["grad_exponent"] <= hi),
                     "symmetry_pass": bool(rep.get("symmetry_gap", 0.0) <= 1e-8)}
    out.cache["green"] = {"key": key}
    out.json("green.json", rep)
    status = "pass" if all(v for k, v in rep["checks"].items() if k.endswith("pass")) else "fail"
    return rep, {"box": {"d": 3, "h": h, "nodes": int((round(1 / h) + 1) * round(1 / h) ** 2)}}, status


def _run(cmd, cfg, out, args):
    """Run one subcommand; returns (grids, status)."""
    if cmd == "cell":
        _, grids = cmd_cell(cfg, out, args)
        return grids, "pass"
    if cmd == "interface":
        _, grids = cmd_interface(cfg, out, args)
        return grids, "pass"
    if cmd == "rates":
        _, grids, status = cmd_rates(cfg, out, args)
        return grids, status
    if cmd == "green":
        _, grids, status = cmd_green(cfg, out, args)
        return grids, status
    raise ConfigError("unknown subcommand %r" % (cmd,))


def build_parser():
    p = _Parser(prog="homoglab", description="Interface homogenisation experiments.")
    p.add_argument("--version", action="version", version="homoglab " + __version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in (("cell", "periodic cell problems and effective tensors"),
                        ("interface", "interface measure, correctors and flux correctors"),
                        ("rates", "convergence study on the interface box"),
                        ("green", "Green function decay probe (d = 3)"),
                        ("all", "cell, interface, rates and green in sequence")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", "-c", help="YAML configuration file")
        s.add_argument("--out", "-o", help="output directory (overrides output.dir)")
        s.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="dotted-key override, repeatable")
        s.add_argument("overrides_pos", nargs="*", metavar="KEY=VALUE",
                       help="dotted-key overrides")
        s.add_argument("--cache", choices=("use", "refresh", "off"), default="use",
                       help="cell-data cache policy")
        s.add_argument("--jobs", type=int, default=1, help="worker processes for per-eps solves")
        if name in ("rates", "all"):
            s.add_argument("--eps-list", help="comma-separated eps values, e.g. 1/8,1/16")
            s.add_argument("--refine", type=int, help="nodes per eps (h = eps / refine)")
            s.add_argument("--interior-only", action="store_true",
                           help="judge slopes on the interior sub-box only")
    return p


def _parse_eps(text):
    vals = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            if "/" in tok:
                a, b = tok.split("/", 1)
                vals.append(float(a) / float(b))
            else:
                vals.append(float(tok))
        except (ValueError, ZeroDivisionError):
            raise ConfigError("cannot parse eps value %r" % (tok,))
    if not vals:
        raise ConfigError("--eps-list is empty")
    return vals


def main(argv=None):
    parser = build_parser()
    # overrides may sit anywhere after the subcommand, also between options
    args, rest = parser.parse_known_args(argv)
    unknown = [r for r in rest if r.startswith("-") or "=" not in r]
    if unknown:
        parser.error("unrecognized arguments: %s" % " ".join(unknown))
    args.overrides_pos = list(args.overrides_pos) + rest
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        cfg = load_config(args.config, list(args.overrides) + list(args.overrides_pos))
        if getattr(args, "eps_list", None):
            cfg["rates"]["eps_list"] = _parse_eps(args.eps_list)
        if getattr(args, "refine", None):
            cfg["rates"]["refine"] = args.refine
        if getattr(args, "interior_only", False):
            cfg["rates"]["interior_only"] = True
        if args.out:
            cfg["output"]["dir"] = args.out
        out = Outputs(cfg["output"]["dir"])
        cmds = ["cell", "interface", "rates", "green"] if args.command == "all" else [args.command]
        grids, statuses = {}, {}
        for cmd in cmds:
            g, st = _run(cmd, cfg, out, args)
            grids.update(g)
            statuses[cmd] = st
            print("%s: %s" % (cmd, st))
        status = "pass" if all(v == "pass" for v in statuses.values()) else "fail"
        out.manifest(args.command, cfg, grids, status, {"statuses": statuses,
                                                       "cache_dir": str(cache_dir())})
        print("outputs written to %s" % out.root)
        return 0 if status == "pass" else 2
    except ConfigError as exc:
        print("configuration error: %s" % exc, file=sys.stderr)
        return 1
    except DiagnosticError as exc:
        msg = exc.args[0] if exc.args else ""
        print("diagnostic failure (%s): %s" % (type(exc).__name__, msg), file=sys.stderr)
        detail = exc.args[1] if len(exc.args) > 1 else None
        if detail is not None:
            print("detail: %s" % (np.array2string(np.asarray(detail), precision=6),),
                  file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
