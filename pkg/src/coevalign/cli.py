"""Command line interface.

Every subcommand writes a ``#`` header carrying the toolkit version, the
subcommand and a hash of its effective configuration. Thread counts and
output paths do not enter the hash, so the same inputs and seed give
byte-identical outputs whatever the parallelism.

Exit codes: 0 success (a non-converged solver still exits 0 and flags
it in the header), 1 usage error, 2 unreadable or malformed input,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, aligner, cnf, features, formats, gauss, ggl, mrf, msa, potentials, search
from .lattice import PathError

log = logging.getLogger("coevalign")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3
THREADS_ENV = "COEVALIGN_THREADS"

# keys that never change results and stay out of the config hash
_UNHASHED = {"command", "func", "config", "threads", "verbose", "output", "triples", "mapping_out"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --- plumbing ---------------------------------------------------------------------------------


def _effective_config(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in _UNHASHED}


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _header(args, extra=()):
    cfg = _effective_config(args)
    return [
        f"coevalign {__version__}",
        f"command {args.command}",
        f"config-hash {config_hash(cfg)}",
        "config " + json.dumps(cfg, sort_keys=True, separators=(",", ":")),
        *extra,
    ]


def _meta(args):
    return {"toolkit": f"coevalign {__version__}", "command": args.command,
            "config_hash": config_hash(_effective_config(args))}


def _emit(path, text):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _read_text(path):
    return Path(path).read_text()


def _threads(args):
    n = args.threads
    if n is None:
        env = os.environ.get(THREADS_ENV, "1")
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    if n < 1:
        raise UsageError("thread count must be at least 1")
    return n


def _load_model(path):
    return cnf.model_from_json(_read_text(path))


def _bg(args, templates, targets):
    return potentials.BackgroundModel(list(templates), args.bg_samples, args.seed, list(targets),
                                      args.bg_exhaustive)


def _edge_lo(args, mrfs):
    """Log-odds table for edge potentials, attaching two-bin distances where allowed."""
    if args.node_only or not all(m.edges for m in mrfs):
        return None, mrfs
    missing = [m for m in mrfs if not m.has_distances]
    if missing and not args.two_bin:
        names = ", ".join(repr(m.name) for m in missing)
        raise potentials.SchemaMismatch(
            f"MRF {names} has no distance distributions; pass --two-bin or --node-only")
    if missing:
        tb = mrf.TwoBin(args.two_bin_a, args.two_bin_b)
        mrfs = [mrf.attach_distance_distributions(m, tb) if not m.has_distances else m for m in mrfs]
    if args.lo:
        return potentials.read_lo_file(_read_text(args.lo)), mrfs
    if all(m.bins == mrf.TWO_BINS for m in mrfs):
        return potentials.DEFAULT_TWO_BIN_LO, mrfs
    raise potentials.SchemaMismatch(
        f"no log-odds table for bins {mrfs[0].bins}; pass --lo (the built-in table covers two bins only)")


def _admm_cfg(args):
    return aligner.AdmmAlignConfig(args.rho, args.max_iter, args.split, args.penalty)


def _ggl_cfg(args):
    return ggl.GglConfig(lam1=args.lam1, alpha=args.alpha, lam2=args.lam2, rho=args.rho,
                         max_iter=args.max_iter, tol=args.tol)


# --- subcommands ------------------------------------------------------------------------------


def cmd_msa_stats(args):
    a = msa.read_msa(args.msa, args.format)
    w = msa.sequence_weights(a, args.identity)
    prof = msa.build_profile(a, w, pseudocount=0.0)
    gap = (a.codes == msa.GAP).mean(axis=0)
    rows = [
        ("rows", a.n_rows),
        ("columns", a.L),
        ("meff", f"{msa.meff(a, args.hamming):.6f}"),
        ("neff", f"{msa.neff(prof):.6f}"),
        ("gap_fraction_mean", f"{gap.mean():.6f}"),
        ("gap_fraction_max", f"{gap.max():.6f}"),
        ("gappy_columns", int(np.sum(gap > args.max_gap))),
        ("distinct_rows", msa.remove_duplicates(a).n_rows),
    ]
    body = "".join(f"{k}\t{v}\n" for k, v in rows)
    _emit(args.output, "".join(f"# {h}\n" for h in _header(args)) + body)


def cmd_mrf_build(args):
    a = msa.clean(msa.read_msa(args.msa, args.format), args.max_gap)
    w = msa.sequence_weights(a, args.identity)
    budget = mrf.EdgeBudget(args.top_k, args.threshold)
    text = _read_text(args.coupling_file) if args.coupling_file else None
    if args.coupling == "file" and text is None:
        raise UsageError("--coupling file needs --coupling-file")
    gcfg = ggl.GglConfig(lam1=args.lam1)
    model = mrf.build_mrf(a, w, args.coupling, budget, args.min_sep, args.name or Path(args.msa).stem,
                          text, gcfg, args.pseudocount)
    if args.distances:
        model = mrf.attach_distance_distributions(model, _read_text(args.distances))
    elif args.two_bin:
        model = mrf.attach_distance_distributions(model, mrf.TwoBin(args.two_bin_a, args.two_bin_b))
    model = mrf.Mrf(model.marginals, model.edges, model.bins, model.provenance, model.name,
                    model.min_sep, _meta(args))
    if args.output is None:
        raise UsageError("mrf-build writes a binary file; pass -o")
    mrf.write_mrf(model, args.output)
    log.info("wrote %r with %d edges", model.name, len(model.edges))


def _family_cov(a, args):
    w = msa.sequence_weights(a, args.identity)
    return gauss.shrink(gauss.empirical_covariance(a, w), args.shrink), w


def cmd_contacts_predict(args):
    target = msa.remove_duplicates(msa.read_msa(args.msa, args.format))
    aux = [msa.remove_duplicates(msa.read_msa(p, args.format)) for p in args.aux]
    if aux and not (args.mapping or args.auto_map):
        raise UsageError("auxiliary families need --mapping or --auto-map")
    if args.mapping and args.auto_map:
        raise UsageError("--mapping and --auto-map are exclusive")
    if (args.mapping or args.auto_map) and not aux:
        raise UsageError("a column mapping needs --aux families")
    mapping = None
    if args.mapping:
        mapping = formats.read_mapping(_read_text(args.mapping), len(aux))
        formats.check_mapping(mapping, target.L, [f.L for f in aux])
    elif aux:
        pt = msa.build_profile(target, msa.sequence_weights(target, args.identity)).p
        maps = []
        for f in aux:
            pa = msa.build_profile(f, msa.sequence_weights(f, args.identity)).p
            maps.append(aligner.profile_column_mapping(pt, pa))
        mapping = ggl.ColumnMapping(maps)
        if args.mapping_out:
            Path(args.mapping_out).write_text(formats.format_mapping(mapping))
    prior = formats.read_prior(_read_text(args.prior), target.L) if args.prior else None
    cfg = _ggl_cfg(args)
    covs = [_family_cov(f, args) for f in [target] + aux]
    history = []
    status = []

    def solve(fams, groups, prior_=None):
        hist = []
        out = ggl.solve_ggl(fams, groups, cfg, prior_, hist, _threads(args))
        history.append(hist)
        status.append((out[0].converged, out[0].iterations, hist[-1][1], hist[-1][2]))
        return out

    if args.baseline == "joint" or not aux:
        fams = ggl.FamilySet([c for c, _ in covs])
        groups = ggl.build_groups(mapping, target.L, args.alpha) if aux else ggl.GroupSpec.empty()
        contacts = ggl.contacts_from_precision(solve(fams, groups, prior)[0], not args.no_apc, args.min_sep)
    elif args.baseline == "merge":
        merged = ggl.merge_families(target, aux, mapping)
        cov, _ = _family_cov(merged, args)
        prec = solve(ggl.FamilySet([cov]), ggl.GroupSpec.empty(), prior)[0]
        contacts = ggl.contacts_from_precision(prec, not args.no_apc, args.min_sep)
    else:
        lists, weights = [], []
        for n, ((cov, _), fam) in enumerate(zip(covs, [target] + aux)):
            prec = solve(ggl.FamilySet([cov]), ggl.GroupSpec.empty(), prior if n == 0 else None)[0]
            depth = args.vote_depth if args.vote_depth else 2 * fam.L
            lists.append(ggl.contacts_from_precision(prec, not args.no_apc, args.min_sep).top(depth))
            weights.append(msa.meff(fam))
        contacts = ggl.majority_vote(lists, mapping, weights)
    for run, hist in enumerate(history):
        for it, rp, rd in hist:
            log.info("admm run %d iter %d primal %.3e dual %.3e", run, it, rp, rd)
    converged = all(s[0] for s in status)
    extra = [f"converged {str(converged).lower()}"]
    extra += [f"solve {n} iterations {it} primal {rp:.6e} dual {rd:.6e}"
              for n, (_, it, rp, rd) in enumerate(status)]
    if not converged:
        log.warning("solver stopped at max_iter; contacts come from the lowest-residual iterate")
    if args.top:
        contacts = contacts.top(args.top)
    _emit(args.output, formats.format_contacts(contacts, _header(args, extra)))


def cmd_contacts_eval(args):
    pred = formats.read_contacts(_read_text(args.pred))
    native = formats.read_native(_read_text(args.native))
    L = args.length or pred.L
    table = search.contact_accuracy(pred, native, L)
    lines = [f"# {h}" for h in _header(args)] + ["# range\tfraction\taccuracy\tevaluated\tunderfilled"]
    for (rname, fname), cell in table.items():
        lines.append(f"{rname}\t{fname}\t{cell.accuracy:.6f}\t{cell.evaluated}\t{str(cell.underfilled).lower()}")
    _emit(args.output, "\n".join(lines) + "\n")


def _align_pair(tmpl, query, scorer, bg, lo, args):
    rt, rs = features.mrf_table(tmpl), features.mrf_table(query)
    node = potentials.node_potentials(rt, rs, scorer, bg)
    edges = potentials.EdgePotentialTable.empty()
    if lo is not None:
        edges = potentials.build_edge_potentials(tmpl, query, lo, args.prune_below)
    return aligner.admm_align(aligner.AlignProblem(node, edges), _admm_cfg(args))


def cmd_align(args):
    tmpl, query = mrf.read_mrf(args.template), mrf.read_mrf(args.query)
    scorer = potentials.Scorer(_load_model(args.model))
    lo, (tmpl, query) = _edge_lo(args, [tmpl, query])
    bg = _bg(args, [features.mrf_table(tmpl)], [features.mrf_table(query)])
    res = _align_pair(tmpl, query, scorer, bg, lo, args)
    if not res.converged:
        log.warning("aligner stopped after %d iterations without agreement", res.iterations)
    text = aligner.format_alignment(res, tmpl.name or "template", query.name or "query",
                                    aligner.consensus(tmpl.marginals), aligner.consensus(query.marginals),
                                    _header(args))
    _emit(args.output, text)
    if args.triples:
        Path(args.triples).write_text("".join(f"# {h}\n" for h in _header(args))
                                      + aligner.format_triples(res.path))


def _library_paths(entries):
    out = []
    for e in entries:
        p = Path(e)
        out.extend(sorted(p.glob("*.mrf")) if p.is_dir() else [p])
    if not out:
        raise UsageError("template library is empty")
    return out


def cmd_search(args):
    query = mrf.read_mrf(args.query)
    paths = _library_paths(args.library)
    entries = [(p.stem, mrf.read_mrf(p)) for p in paths]
    lib = search.TemplateLibrary(entries)
    if args.K > len(lib):
        log.warning("K=%d exceeds the library size %d; every template is realigned", args.K, len(lib))
    scorer = potentials.Scorer(_load_model(args.model))
    evd = search.parse_evd(_read_text(args.evd)) if args.evd else None
    if evd is None and len(lib) < 30:
        raise UsageError("fewer than 30 templates: pass --evd with a fitted score distribution")
    lo = None
    if not args.node_only:
        have_dist = [m for _, m in entries if m.edges] + ([query] if query.edges else [])
        if have_dist and all(m.has_distances for m in have_dist):
            lo = potentials.read_lo_file(_read_text(args.lo)) if args.lo else None
            if lo is None and all(m.bins == mrf.TWO_BINS for m in have_dist):
                lo = potentials.DEFAULT_TWO_BIN_LO
            if lo is None:
                raise potentials.SchemaMismatch("pass --lo for MRFs with multi-bin distance distributions")
        elif have_dist and not args.two_bin:
            raise potentials.SchemaMismatch("MRFs without distance distributions; pass --two-bin or --node-only")
        elif have_dist:
            tb = mrf.TwoBin(args.two_bin_a, args.two_bin_b)
            attach = lambda m: mrf.attach_distance_distributions(m, tb) if m.edges and not m.has_distances else m
            query = attach(query)
            entries = [(tid, attach(m)) for tid, m in entries]
            lib = search.TemplateLibrary(entries)
            lo = potentials.read_lo_file(_read_text(args.lo)) if args.lo else potentials.DEFAULT_TWO_BIN_LO
    bg = _bg(args, [features.mrf_table(m) for _, m in entries], [features.mrf_table(query)])
    cfg = search.SearchConfig(args.K, args.edge_weight, args.prune_below, _admm_cfg(args))
    result = search.two_stage_search(query, lib, scorer, bg, lo, cfg, evd)
    extra = [f"realigned {result.realigned}", f"evd mu {result.evd.mu!r} beta {result.evd.beta!r}"]
    _emit(args.output, search.format_hits(result, _header(args, extra)))


def _read_weights(path, ref):
    vals = [float(v) for v in _read_text(path).split()]
    if len(vals) != len(ref):
        raise formats.FileFormatError(f"{path}: expected {len(ref)} weights, got {len(vals)}")
    return cnf.ReferenceAlignment(ref, tuple(vals))


def _training_pairs(path):
    base = Path(path).parent
    pairs, schema = [], None
    for lineno, line in enumerate(_read_text(path).splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (3, 4):
            raise formats.FileFormatError(f"{path} line {lineno}: expected 'template query reference [weights]'")
        t, q = mrf.read_mrf(base / parts[0]), mrf.read_mrf(base / parts[1])
        rt, rs = features.mrf_table(t), features.mrf_table(q)
        ref = aligner.parse_triples(_read_text(base / parts[2]), rt.L, rs.L)
        ref = _read_weights(base / parts[3], ref) if len(parts) == 4 else cnf.ReferenceAlignment.uniform(ref)
        sch = features.table_schema(rt, rs)
        if schema not in (None, sch):
            raise potentials.SchemaMismatch(f"{path} line {lineno}: feature schema differs from earlier pairs")
        schema = sch
        pairs.append((features.lattice_features(rt, rs), ref))
    if not pairs:
        raise formats.FileFormatError(f"{path}: no training pairs")
    return pairs, schema


def cmd_cnf_train(args):
    pairs, schema = _training_pairs(args.pairs)
    tcfg = cnf.TrainConfig(args.l2, args.restarts, args.budget, args.seed, args.hidden, args.init_scale)
    model = cnf.train(pairs, args.objective, tcfg, schema)
    _emit(args.output, cnf.model_to_json(model, _meta(args)))


def cmd_align_eval(args):
    ref = aligner.parse_triples(_read_text(args.ref))
    pred = aligner.parse_triples(_read_text(args.pred), ref.m, ref.n)
    lines = [f"# {h}" for h in _header(args)] + ["# offset\tprecision\trecall\tprecision_defined"]
    for off in args.offsets:
        acc = search.alignment_accuracy(pred, ref, off)
        lines.append(f"{off}\t{acc.precision:.6f}\t{acc.recall:.6f}\t{str(acc.precision_defined).lower()}")
    _emit(args.output, "\n".join(lines) + "\n")


def _read_scores(path):
    scores = []
    for lineno, line in enumerate(_read_text(path).splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t") if "\t" in line else line.split()
        try:
            scores.append(float(fields[3] if len(fields) >= 5 else fields[0]))
        except ValueError:
            raise formats.FileFormatError(f"{path} line {lineno}: unparsable score") from None
    return scores


def cmd_pvalue_fit(args):
    fit = search.fit_evd(_read_scores(args.scores))
    _emit(args.output, "".join(f"# {h}\n" for h in _header(args)) + search.format_evd(fit))


# --- parser -----------------------------------------------------------------------------------


def _common(p, seed=True):
    p.add_argument("-o", "--output", help="output file (default: stdout)")
    p.add_argument("--config", help="key = value file; explicit flags take precedence")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads (default: ${THREADS_ENV} or 1); never changes results")
    p.add_argument("-v", "--verbose", action="count", default=0)
    if seed:
        p.add_argument("--seed", type=int, default=0)


def _msa_opts(p):
    p.add_argument("--format", choices=["aligned-fasta", "stockholm"], default=None)
    p.add_argument("--identity", type=float, default=0.62, help="sequence weighting identity threshold")


def _align_opts(p):
    p.add_argument("--model", required=True, help="trained scorer (JSON)")
    p.add_argument("--node-only", action="store_true", help="ignore edge potentials")
    p.add_argument("--two-bin", action="store_true",
                   help="derive contact/non-contact distributions for MRFs that lack them")
    p.add_argument("--two-bin-a", type=float, default=4.0)
    p.add_argument("--two-bin-b", type=float, default=-2.0)
    p.add_argument("--lo", help="distance-bin log-odds table")
    p.add_argument("--prune-below", type=float, default=0.0)
    p.add_argument("--bg-samples", type=int, default=1000, help="random column pairs for the reference state")
    p.add_argument("--bg-exhaustive", action="store_true", help="use every column pair instead of sampling")
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--max-iter", type=int, default=50)
    p.add_argument("--split", choices=["ordered", "symmetric"], default="ordered")
    p.add_argument("--penalty", choices=["one_sided", "expanded"], default="one_sided")


def build_parser():
    parser = _Parser(prog="coevalign", description="Coevolution-aware contact prediction and alignment.")
    parser.add_argument("--version", action="version", version=f"coevalign {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("msa-stats", help="row count, Meff, NEFF and gap statistics")
    p.add_argument("msa")
    _msa_opts(p)
    p.add_argument("--hamming", type=float, default=0.3)
    p.add_argument("--max-gap", type=float, default=0.9)
    _common(p, seed=False)
    p.set_defaults(func=cmd_msa_stats)

    p = sub.add_parser("mrf-build", help="family MRF from an alignment")
    p.add_argument("msa")
    _msa_opts(p)
    p.add_argument("--coupling", choices=list(mrf.COUPLING_SOURCES), default="mi")
    p.add_argument("--coupling-file")
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--min-sep", type=int, default=6)
    p.add_argument("--max-gap", type=float, default=0.9)
    p.add_argument("--pseudocount", type=float, default=1.0)
    p.add_argument("--lam1", type=float, default=0.01)
    p.add_argument("--distances", help="distance-bin distribution file")
    p.add_argument("--two-bin", action="store_true")
    p.add_argument("--two-bin-a", type=float, default=4.0)
    p.add_argument("--two-bin-b", type=float, default=-2.0)
    p.add_argument("--name")
    _common(p, seed=False)
    p.set_defaults(func=cmd_mrf_build)

    p = sub.add_parser("contacts-predict", help="ranked contacts from one or several families")
    p.add_argument("msa", help="target family")
    _msa_opts(p)
    p.add_argument("--aux", nargs="*", default=[], help="auxiliary families")
    p.add_argument("--mapping", help="column mapping file")
    p.add_argument("--auto-map", action="store_true", help="map columns by profile alignment")
    p.add_argument("--mapping-out", help="write the automatic mapping here")
    p.add_argument("--prior", help="contact prior file")
    p.add_argument("--baseline", choices=["joint", "voting", "merge"], default="joint")
    p.add_argument("--vote-depth", type=int, default=0, help="contacts per family in the vote (default 2L)")
    p.add_argument("--lam1", type=float, default=0.01)
    p.add_argument("--lam2", type=float, default=0.005)
    p.add_argument("--alpha", type=float, default=0.001)
    p.add_argument("--rho", type=float, default=0.1)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--shrink", type=float, default=0.1)
    p.add_argument("--min-sep", type=int, default=6)
    p.add_argument("--no-apc", action="store_true")
    p.add_argument("--top", type=int, default=0, help="keep the best N contacts (default all)")
    _common(p, seed=False)
    p.set_defaults(func=cmd_contacts_predict)

    p = sub.add_parser("contacts-eval", help="top-L/k contact accuracy by separation range")
    p.add_argument("pred")
    p.add_argument("--native", required=True)
    p.add_argument("--length", type=int, default=None)
    _common(p, seed=False)
    p.set_defaults(func=cmd_contacts_eval)

    p = sub.add_parser("align", help="align a query MRF to a template MRF")
    p.add_argument("template")
    p.add_argument("query")
    _align_opts(p)
    p.add_argument("--triples", help="also write the path as 'x y state' lines")
    _common(p)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("search", help="rank a template library against a query")
    p.add_argument("query")
    p.add_argument("--library", nargs="+", required=True, help="MRF files or directories")
    _align_opts(p)
    p.add_argument("--K", type=int, default=200)
    p.add_argument("--edge-weight", type=float, default=1.0)
    p.add_argument("--evd", help="fitted score distribution (from pvalue-fit)")
    _common(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("cnf-train", help="train the alignment scorer")
    p.add_argument("pairs", help="lines of 'template.mrf query.mrf reference.triples [weights]'")
    p.add_argument("--objective", choices=["expected_tm", "ml"], default="expected_tm")
    p.add_argument("--l2", type=float, default=1e-3)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--budget", type=int, default=200)
    p.add_argument("--hidden", type=int, default=12)
    p.add_argument("--init-scale", type=float, default=0.1)
    _common(p)
    p.set_defaults(func=cmd_cnf_train)

    p = sub.add_parser("align-eval", help="alignment precision and recall against a reference")
    p.add_argument("pred")
    p.add_argument("ref")
    p.add_argument("--offsets", type=int, nargs="+", default=[0, 4])
    _common(p, seed=False)
    p.set_defaults(func=cmd_align_eval)

    p = sub.add_parser("pvalue-fit", help="fit a Gumbel distribution to scores")
    p.add_argument("scores", help="one score per line, or a search hit table")
    _common(p, seed=False)
    p.set_defaults(func=cmd_pvalue_fit)
    return parser


def _coerce(action, raw):
    if isinstance(action, argparse._StoreTrueAction):
        low = raw.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise UsageError(f"config key {action.dest!r} expects a boolean, got {raw!r}")
        return low in ("true", "1", "yes")
    conv = action.type or str
    try:
        if action.nargs in ("*", "+"):
            return [conv(v) for v in raw.replace(",", " ").split()]
        val = conv(raw)
    except ValueError:
        raise UsageError(f"config key {action.dest!r}: bad value {raw!r}") from None
    if action.choices is not None and val not in action.choices:
        raise UsageError(f"config key {action.dest!r}: {raw!r} not in {sorted(action.choices)}")
    return val


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a subcommand is required (see --help)")
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
        try:
            raw = formats.read_config(_read_text(args.config))
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
        defaults = {}
        for key, val in raw.items():
            if key not in actions or actions[key].required or not actions[key].option_strings:
                raise UsageError(f"config key {key!r} is not an option of {args.command}")
            defaults[key] = _coerce(actions[key], val)
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if not exc.code else EXIT_USAGE
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        _threads(args)
        args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ggl.NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError, PathError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
