"""Command-line front end.

Every report is tab-separated text preceded by ``#`` lines recording the
resolved configuration.  Settings may come from an INI file (``--config``):
keys in ``[defaults]`` apply to every subcommand and keys in a section named
after the subcommand (``[effects]``, ``[gee]``, ...) apply to that one; flags
on the command line override both.  Keys use the long flag name with
underscores, e.g. ``per_1000 = true``.

Exit status: 0 success, 2 invalid input, 3 estimation failure, 64 usage.
"""

from __future__ import annotations

import argparse
import configparser
import sys
import warnings

import numpy as np

from . import __version__
from .confounding import BiasSpecGeneral, bias_general, correct, sweep_bias
from .data import (ExposureSummaryFn, cluster_features, format_clusters,
                   format_group_summary, format_households, parse_clusters,
                   parse_group_summary, parse_households, summarize_households)
from .errors import EstimationError, ValidationError
from .estimands import all_effects, decomposition_report
from .infectiousness import (InfectStudy, SensitivitySpec, crude_effect, gamma_range,
                             monotonicity_bounds, sweep, theta_adjust)
from .oracle import (ClusterWorld, HouseholdWorld, TrialWorld, binary_rule, linear_rule,
                     simulate_clusters, simulate_households, simulate_trial)
from .selection import (DeltaFamily, ExpForm, LinearForm, PropensitySpec, SelectionModel,
                        sensitivity_sweep)

EXIT_OK, EXIT_INVALID, EXIT_ESTIMATION, EXIT_USAGE = 0, 2, 3, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        if message.startswith("unrecognized arguments") or "invalid choice" in message:
            raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")
        raise ValidationError(message)


# -- small parsers -----------------------------------------------------------

def _floats(text):
    try:
        return tuple(float(x) for x in str(text).replace(";", ",").split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _pair(text):
    vals = _floats(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected two numbers 'low,high', got {text!r}")
    return vals


def _terms(text):
    return tuple(t.strip() for t in str(text).split(",") if t.strip())


def _bool(text):
    s = str(text).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"expected a boolean, got {text!r}")


def parse_gamma_grid(text):
    """``"0/0; 0.5/0.2; 0.5,0.1/0"``: entries separated by ';', the d and s
    parameters of each entry by '/', and components of one parameter by ','."""
    grid = []
    for entry in str(text).split(";"):
        if not entry.strip():
            continue
        parts = entry.split("/")
        if len(parts) != 2:
            raise ValidationError(f"gamma-grid entry {entry.strip()!r} needs the form d/s")
        grid.append((_floats(parts[0]), _floats(parts[1])))
    if not grid:
        raise ValidationError("empty gamma grid")
    return grid


# -- output ------------------------------------------------------------------

class Report:
    def __init__(self, command, config, precision):
        self.lines = [f"# spillover {__version__} {command}"]
        for key in sorted(config):
            self.lines.append(f"# {key} = {config[key]}")
        self.precision = precision

    def fmt(self, value):
        if value is None:
            return "NA"
        if isinstance(value, (bool, np.bool_)):
            return "true" if value else "false"
        if isinstance(value, (int, np.integer)):
            return str(int(value))
        if isinstance(value, (float, np.floating)):
            return "NA" if np.isnan(value) else f"{float(value):.{self.precision}g}"
        return str(value)

    def header(self, cols):
        self.lines.append("\t".join(cols))

    def row(self, values):
        self.lines.append("\t".join(self.fmt(v) for v in values))

    def text(self):
        return "\n".join(self.lines) + "\n"


def _resolved(args):
    skip = {"func", "global_config"}
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in skip or value is None or value == ():
            continue
        if isinstance(value, (tuple, list)):
            value = ",".join(str(v) for v in value)
        out[key] = value
    return out


def _read(path):
    if path == "-":
        return sys.stdin.read()
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror}") from None


def _write(path, text, stdout):
    if path in (None, "-"):
        stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _ini(path, section="world"):
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    cp.read_string(_read(path))
    if not cp.has_section(section):
        raise ValidationError(f"{path}: missing [{section}] section")
    return dict(cp.items(section))


# -- subcommands -------------------------------------------------------------

def cmd_effects(args, out):
    trial = parse_group_summary(_read(args.data))
    effects = all_effects(trial, args.phi, args.psi, args.level)
    factor, units = (1000.0, "per1000") if args.per_1000 else (1.0, "rate")
    rep = Report("effects", _resolved(args), args.precision)
    rep.header(("contrast", "point", "variance", "ci_low", "ci_high", "convention", "units"))
    for e in effects:
        e = e.scaled(factor, units)
        ci = e.ci or (None, None)
        rep.row((e.contrast, e.point, e.variance, ci[0], ci[1], e.convention, e.units))
    if args.decomposition:
        d = decomposition_report(trial, args.phi, args.psi)
        for name in ("residual_total", "residual_overall"):
            rep.row((name, getattr(d, name) * factor, None, None, None, "reduction", units))
    return rep.text()


def _study(args):
    if args.data:
        study = summarize_households(parse_households(_read(args.data)))
    else:
        vals = (args.p1, args.p0, args.attack1, args.attack0)
        if any(v is None for v in vals):
            raise ValidationError("give --data or all of --p1, --p0, --attack1, --attack0")
        study = InfectStudy(*vals)
    return study


def cmd_infectiousness(args, out):
    study = _study(args)
    rep = Report("infectiousness", _resolved(args), args.precision)
    rep.header(("kind", "param", "p_v", "p_u", "rd", "rr", "or_", "efficacy", "in_range",
                "rd_ci_low", "rd_ci_high"))

    def emit(kind, param, eff, in_range=True):
        if eff is None:
            rep.row((kind, param) + (None,) * 6 + (in_range, None, None))
            return
        s = eff.scales()
        ci = eff.rd_ci or (None, None)
        rep.row((kind, param, eff.p_v, eff.p_u, s["rd"], s["rr"], s["or_"], s["efficacy"],
                 in_range, ci[0], ci[1]))

    emit("crude", None, crude_effect(study, args.level))
    if args.bounds and gamma_range(study) is not None:
        for gm, eff in monotonicity_bounds(study)["effects"]:
            emit("bound", gm, eff)
    for kind in ("theta", "gamma", "beta"):
        grid = getattr(args, kind)
        if not grid:
            continue
        if kind == "theta":
            # theta shifts the Wald interval as well
            for value in grid:
                try:
                    emit("theta", value, theta_adjust(study, value, args.level))
                except ValidationError:
                    emit("theta", value, None, False)
            continue
        for r in sweep(study, SensitivitySpec(kind, tuple(grid))):
            emit(kind, r.param, r.effect, r.in_range)
    return rep.text()


def _general_spec(path):
    """General bias specification from an INI file.

    ``[support] points = u:v, ...``; ``[reference] point = u:v``;
    ``[shift]`` and ``[dist]`` map ``z,g`` to values aligned with the points;
    ``[dist] marginal = ...``; ``[contrast] zg = z,g`` and ``alt = z,g``.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.optionxform = str
    cp.read_string(_read(path))

    def point(text):
        a, b = text.split(":")
        return float(a), float(b)

    def key(text):
        z, g = _floats(text)
        return (z, g)

    try:
        support = tuple(point(p) for p in cp["support"]["points"].split(","))
        ref = point(cp["reference"]["point"])
        shifts = {key(k): _floats(v) for k, v in cp["shift"].items()}
        dists = {key(k): _floats(v) for k, v in cp["dist"].items() if k != "marginal"}
        marg = _floats(cp["dist"]["marginal"])
        zg, alt = key(cp["contrast"]["zg"]), key(cp["contrast"]["alt"])
    except (KeyError, ValueError, argparse.ArgumentTypeError) as exc:
        raise ValidationError(f"{path}: malformed bias specification ({exc})") from None
    index = {p: i for i, p in enumerate(support)}

    def shift(z, g, u, v):
        try:
            return shifts[(float(z), float(g))][index[(float(u), float(v))]]
        except KeyError:
            raise ValidationError(f"no shift given for z,g = {z},{g}") from None

    def dist_at(z, g):
        try:
            return dists[(float(z), float(g))]
        except KeyError:
            raise ValidationError(f"no distribution given for z,g = {z},{g}") from None

    return BiasSpecGeneral(support, shift, dist_at, marg, ref), zg, alt


def cmd_confound_bias(args, out):
    rep = Report("confound-bias", _resolved(args), args.precision)
    rep.header(("lambda", "tau", "du", "dv", "bias", "corrected", "ci_low", "ci_high"))
    if args.spec:
        spec, zg, alt = _general_spec(args.spec)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            b = bias_general(spec, zg, alt)
        est = correct(args.observed, b, args.ci, simple=False)
        rep.row((None, None, None, None, est.bias, est.corrected, None, None))
        return rep.text()
    for name in ("lam", "tau", "du", "dv"):
        if not getattr(args, name):
            raise ValidationError(f"--{'lambda' if name == 'lam' else name} is required without --spec")
    for r in sweep_bias(args.observed, args.lam, args.tau, args.du, args.dv, args.ci):
        ci = r.estimate.ci_corrected or (None, None)
        rep.row((r.spec.lam, r.spec.tau, r.spec.du, r.spec.dv, r.estimate.bias,
                 r.estimate.corrected, ci[0], ci[1]))
    return rep.text()


def load_model(path=None):
    """A :class:`SelectionModel` from the ``[model]`` section of an INI file."""
    cfg = _ini(path, "model") if path else {}
    q_form = ExpForm if cfg.get("q_link", "identity") == "exp" else LinearForm
    if cfg.get("q_link", "identity") not in ("identity", "exp"):
        raise ValidationError(f"unknown q_link {cfg['q_link']!r}")
    cov = int(cfg.get("s2_cov", "1")) - 1
    return SelectionModel(
        gamma_d=LinearForm(_terms(cfg.get("gamma_d", "z, z*g"))),
        gamma_s=LinearForm(_terms(cfg.get("gamma_s", "g"))),
        q=q_form(_terms(cfg.get("q", "1, l1, h1"))),
        propensity=PropensitySpec(_terms(cfg.get("propensity", "1, l1")),
                                  cfg.get("propensity_level", "individual")),
        delta_d=DeltaFamily(cfg.get("delta_d", "d1")),
        delta_s=DeltaFamily(cfg.get("delta_s", "s1"), cov=cov),
        g_summary=ExposureSummaryFn(cfg.get("g", "count-of-others")),
    ), ExposureSummaryFn(cfg.get("h", "count-of-others"))


def cmd_gee(args, out):
    model, h = load_model(args.model)
    clusters = parse_clusters(_read(args.data))
    F = cluster_features(clusters, model.g_summary, h)
    grid = parse_gamma_grid(args.gamma_grid)
    rows = sensitivity_sweep(F, model, grid, n_boot=args.bootstrap, seed=args.seed)
    rep = Report("gee", _resolved(args), args.precision)
    names = model.names
    cols = ["lambda_d", "lambda_s"] + names
    if args.bootstrap:
        cols += [f"se_{n}" for n in names]
    rep.header(cols + ["converged"])
    lam = lambda v: ",".join(rep.fmt(x) for x in v)
    failures = 0
    for r in rows:
        if r.result is None:
            failures += 1
            vals = [None] * (len(cols) - 2)
            rep.row([lam(r.lam_d), lam(r.lam_s)] + vals + [False])
            rep.lines.append(f"# error at lambda_d={lam(r.lam_d)} lambda_s={lam(r.lam_s)}: {r.error}")
            continue
        vals = list(r.result.params.vector)
        if args.bootstrap:
            vals += list(r.result.se)
        rep.row([lam(r.lam_d), lam(r.lam_s)] + vals + [r.result.converged])
    if failures == len(rows):
        raise EstimationError(f"every fit failed; first error: {rows[0].error}")
    return rep.text()


_HOUSEHOLD_KEYS = ("doomed", "protected", "immune", "q_doomed_v", "q_doomed_u",
                   "q_protected_u", "q2")


def household_world(cfg):
    try:
        return HouseholdWorld(**{k: float(cfg[k]) for k in _HOUSEHOLD_KEYS if k in cfg})
    except TypeError as exc:
        raise ValidationError(f"household world: {exc}") from None


def trial_world(cfg):
    """TrialWorld plus (phi, psi, counts) from a ``[world]`` section."""
    try:
        fractions = {}
        for item in cfg["fractions"].split(","):
            label, f = item.split(":")
            fractions[label.strip()] = float(f)
        n_groups = int(cfg.get("n_groups", "10"))
        sizes = (tuple(int(x) for x in cfg["sizes"].split(",")) if "sizes" in cfg
                 else (int(cfg.get("size", "100")),) * n_groups)
        pars = {k: float(cfg.get(k, d)) for k, d in (("base", "0.1"), ("direct", "0"), ("spill", "0"))}
        seed = int(cfg.get("outcome_seed", "0"))
        kind = cfg.get("rule", "binary")
        if kind == "binary":
            rule = binary_rule(seed=seed, **pars)
        elif kind == "linear":
            rule = linear_rule(interaction=float(cfg.get("interaction", "0")), seed=seed,
                               spread=float(cfg.get("spread", "0")), **pars)
        else:
            raise ValidationError(f"unknown rule {kind!r}")
        phi, psi = cfg["phi"].strip(), cfg["psi"].strip()
        counts = tuple(int(x) for x in cfg.get("counts", f"{len(sizes) // 2},{len(sizes) - len(sizes) // 2}").split(","))
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"trial world: bad or missing key ({exc})") from None
    return TrialWorld(sizes, rule, fractions, cfg.get("allocation", "mixed")), phi, psi, counts


def cluster_world(cfg):
    kw = {}
    for f in ClusterWorld.__dataclass_fields__:
        if f in cfg:
            kw[f] = cfg[f] if f == "l_law" else (int(cfg[f]) if f == "size" else float(cfg[f]))
    return ClusterWorld(**kw)


def cmd_simulate(args, out):
    cfg = _ini(args.world) if args.world else {}
    config = _resolved(args)
    config.update({f"world.{k}": v for k, v in cfg.items()})
    head = Report(f"simulate {args.kind}", config, args.precision).text()
    if args.kind == "households":
        world = household_world(cfg)
        body = format_households(simulate_households(world, args.n or 1000, args.seed))
    elif args.kind == "trial":
        world, phi, psi, counts = trial_world(cfg)
        body = format_group_summary(simulate_trial(world, phi, psi, counts, args.seed))
    else:
        world = cluster_world(cfg)
        clusters, ledger = simulate_clusters(world, args.n or 100, args.seed)
        body = format_clusters(clusters)
        if args.ledger_out:
            _write(args.ledger_out, head + ledger.format(), out)
    return head + body


# -- parser ------------------------------------------------------------------

def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--out", default="-", help="output path (default stdout)")
    common.add_argument("--precision", type=int, default=6, help="significant digits")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", help="INI file with default settings")

    p = _Parser(prog="spillover", description="Causal effects under interference.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--config", dest="global_config", help="INI file with default settings")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("effects", parents=[common], help="trial effects from group summaries")
    e.add_argument("--data", required=True)
    e.add_argument("--phi", required=True)
    e.add_argument("--psi", required=True)
    e.add_argument("--level", type=float, default=0.95)
    e.add_argument("--per-1000", action="store_true")
    e.add_argument("--decomposition", action="store_true", help="append identity residuals")
    e.set_defaults(func=cmd_effects)

    i = sub.add_parser("infectiousness", parents=[common], help="household infectiousness contrasts")
    i.add_argument("--data")
    for name in ("p1", "p0", "attack1", "attack0"):
        i.add_argument(f"--{name}", type=float)
    i.add_argument("--theta", type=_floats, default=())
    i.add_argument("--gamma", type=_floats, default=())
    i.add_argument("--beta", type=_floats, default=())
    i.add_argument("--bounds", action="store_true", help="add monotonicity bound rows")
    i.add_argument("--level", type=float, default=0.95)
    i.set_defaults(func=cmd_infectiousness)

    c = sub.add_parser("confound-bias", parents=[common], help="bias-corrected contrasts")
    c.add_argument("--observed", type=float, required=True)
    c.add_argument("--ci", nargs=2, type=float, metavar=("LOW", "HIGH"))
    c.add_argument("--lambda", dest="lam", type=_floats, default=())
    c.add_argument("--tau", type=_floats, default=())
    c.add_argument("--du", type=_floats, default=())
    c.add_argument("--dv", type=_floats, default=())
    c.add_argument("--spec", help="INI file with a general (u, v) specification")
    c.set_defaults(func=cmd_confound_bias)

    g = sub.add_parser("gee", parents=[common], help="selection-bias sensitivity fits")
    g.add_argument("--data", required=True)
    g.add_argument("--model", help="INI file with a [model] section")
    g.add_argument("--gamma-grid", default="0/0")
    g.add_argument("--bootstrap", type=int, default=0)
    g.set_defaults(func=cmd_gee)

    s = sub.add_parser("simulate", parents=[common], help="draw data from a known world")
    s.add_argument("kind", choices=("households", "trial", "clusters"))
    s.add_argument("--world", help="INI file with a [world] section")
    s.add_argument("--n", type=int)
    s.add_argument("--ledger-out", help="file for the hidden confounder values")
    s.set_defaults(func=cmd_simulate)
    return p


_FLAGS = {"per_1000", "decomposition", "bounds"}


def _subparser_actions(parser):
    # actions of every subcommand parser
    for sub in parser._subparsers._group_actions[0].choices.values():
        yield from sub._actions


def _lenient_parse(parser, argv):
    """Parse without enforcing required flags; return (namespace, unknown args)."""
    saved = [(a, a.required) for a in _subparser_actions(parser)]
    for a, _ in saved:
        a.required = False
    try:
        return parser.parse_known_args(argv)
    finally:
        for a, req in saved:
            a.required = req


def _apply_config(parser, argv):
    """Parse ``argv`` with INI values as defaults, so that flags take precedence.

    Unknown flags are a usage error even when required flags are missing.
    """
    args, extra = _lenient_parse(parser, argv)
    if extra:
        raise UsageError(f"{parser.format_usage()}spillover: error: unrecognized arguments: {' '.join(extra)}")
    path = args.config or args.global_config
    if not path:
        return parser.parse_args(argv)
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.optionxform = str
    cp.read_string(_read(path))
    values = dict(cp.defaults())
    if cp.has_section("defaults"):
        values.update(cp.items("defaults"))
    if cp.has_section(args.command):
        values.update(cp.items(args.command))
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in values.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("help", "config"):
            raise ValidationError(f"{path}: unknown setting {key!r} for {args.command}")
        if dest in _FLAGS:
            defaults[dest] = _bool(value)
        elif known[dest].nargs == 2:
            try:
                defaults[dest] = _pair(value)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise ValidationError(f"{path}: {key}: {exc}") from None
        elif known[dest].type is not None:
            try:
                defaults[dest] = known[dest].type(value)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise ValidationError(f"{path}: {key}: {exc}") from None
        else:
            defaults[dest] = value
        known[dest].required = False
    sub.set_defaults(**defaults)
    args = parser.parse_args(argv)
    args.config = path
    return args


def run(argv=None, stdout=None, stderr=None):
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        text = args.func(args, stdout)
        _write(args.out, text, stdout)
    except UsageError as exc:
        print(exc, file=stderr)
        return EXIT_USAGE
    except ValidationError as exc:
        print(f"spillover: invalid input: {exc}", file=stderr)
        return EXIT_INVALID
    except EstimationError as exc:
        print(f"spillover: estimation failed: {exc}", file=stderr)
        return EXIT_ESTIMATION
    return EXIT_OK


def main(argv=None):
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())
