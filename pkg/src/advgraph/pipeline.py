"""Staged experiment pipeline: configuration, seeding, artifacts and manifests.

Every stage reads declared input files and config keys, writes its artifacts
under the work directory and records a one-line JSON manifest with the
content hashes of its inputs and outputs. A stage is a pure function of those
inputs, so reruns are byte-identical.
"""
from dataclasses import dataclass
import hashlib
import json
import logging
import os
from pathlib import Path

from . import __version__, kernels
from .attack import AttackConfig, AttackError, AttackReport, attack_corpus, load_variant_file
from .classifier import (ClassifierError, ClassifierTrainConfig, ModelBundle, load_corpus,
                         save_corpus, train_classifier)
from .embedding import EmbeddingTable, corpus_to_sequences, node2vec_embed, sgns_train
from .evaluation import (EvaluationError, avg_perturbation, budget_sweep, clean_eval,
                         format_table, robustness_report, sensitivity_distribution, write_xy)
from .glyph import (GlyphAtlas, GlyphIndex, GlyphModelParams, GlyphTrainConfig, load_glyph_atlas,
                    load_triplets, save_triplets, train_glyph_model)
from .graph import build_graph, load_graph, save_graph
from .phonetics import bundled_lexicon, load_pinyin_lexicon
from .synth import (SynthError, SyntheticSpec, choose_keywords, grouped_glyph_atlas,
                    homophone_charset, synth_corpus, synthetic_triplets)

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    pass


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s):
    if isinstance(s, (tuple, list)):
        return tuple(int(x) for x in s)
    return tuple(int(x) for x in str(s).split(",") if x.strip())


def _strs(s):
    if isinstance(s, (tuple, list)):
        return tuple(s)
    return tuple(x.strip() for x in str(s).split(",") if x.strip())


# key -> (parser, default). Paths are relative to ``workdir``.
SCHEMA = {
    "workdir": (str, "."),
    "seed": (int, 0),
    "workers": (int, 1),
    # inputs and artifacts
    "lexicon": (str, "lexicon.tsv"),
    "atlas": (str, "atlas.glyph24"),
    "triplets": (str, "triplets.tsv"),
    "glyph_params": (str, "glyph.params"),
    "graph": (str, "graph.txt"),
    "graph_emb": (str, "graph.emb"),
    "keywords": (str, "keywords.txt"),
    "train": (str, "train.tsv"),
    "test": (str, "test.tsv"),
    "obf": (str, "obf.tsv"),
    "semantic_emb": (str, "semantic.emb"),
    "models": (str, "models"),
    "model": (str, "defended"),
    "variants": (str, ""),
    "report": (str, "report.txt"),
    # fixture generation
    "charset_size": (int, 200),
    "group_min": (int, 11),
    "group_max": (int, 11),
    "n_triplets": (int, 1000),
    "flip_rate": (float, 0.05),
    # glyph model
    "glyph_alpha": (float, 0.2),
    "glyph_lr": (float, 0.05),
    "glyph_epochs": (int, 3),
    "glyph_batch": (int, 32),
    "glyph_dim": (int, 64),
    # graph
    "graph_k": (int, 10),
    # node2vec
    "n2v_dim": (int, 64),
    "n2v_walks": (int, 10),
    "n2v_length": (int, 40),
    "n2v_window": (int, 5),
    "n2v_p": (float, 1.0),
    "n2v_q": (float, 1.0),
    "n2v_negatives": (int, 5),
    "n2v_epochs": (int, 1),
    "n2v_lr": (float, 0.025),
    # synthetic task
    "classes": (int, 2),
    "keywords_per_class": (int, 4),
    "filler_distance": (int, 3),
    "texts_per_class": (int, 1000),
    "test_per_class": (int, 100),
    "text_length": (_ints, (12, 20)),
    "keywords_per_text": (_ints, (1, 3)),
    "obfuscation_rate": (float, 0.5),
    # semantic embedding
    "sem_dim": (int, 64),
    "sem_window": (int, 5),
    "sem_negatives": (int, 5),
    "sem_epochs": (int, 3),
    "sem_lr": (float, 0.025),
    # classifier
    "clf_lr": (float, 0.002),
    "clf_epochs": (int, 5),
    "clf_batch": (int, 32),
    "clf_filters": (int, 32),
    "clf_widths": (_ints, (2, 3, 4)),
    "weight_decay": (float, 0.001),
    "graph_branch": (_bool, True),
    "semantic_branch": (_bool, True),
    # attack and evaluation
    "attack_budget": (int, 4),
    "attack_source": (str, "both"),
    "attack_limit": (int, 0),
    "sweep_budgets": (_ints, (1, 2, 3, 4)),
    "report_models": (_strs, ("baseline", "defended")),
}

_RANGES = {
    "workers": 1, "charset_size": 2, "group_min": 1, "group_max": 1, "n_triplets": 0,
    "glyph_epochs": 0, "glyph_batch": 1, "glyph_dim": 1, "graph_k": 0, "n2v_dim": 1,
    "n2v_walks": 1, "n2v_length": 2, "n2v_window": 1, "n2v_negatives": 1, "n2v_epochs": 0,
    "classes": 2, "keywords_per_class": 1, "filler_distance": 2, "texts_per_class": 1,
    "test_per_class": 1, "sem_dim": 1, "sem_window": 1, "sem_negatives": 1, "sem_epochs": 0,
    "clf_epochs": 0, "clf_batch": 1, "clf_filters": 1, "attack_budget": 0, "attack_limit": 0,
}


def parse_config_text(text, source="<config>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise PipelineError(f"{source}:{lineno}: expected key=value")
        values[key.strip()] = value.strip()
    return values


class PipelineConfig:
    """Typed view of a key=value config; relative paths resolve against ``workdir``."""

    def __init__(self, raw=None, base_dir="."):
        self.values = {k: d for k, (_, d) in SCHEMA.items()}
        for key, value in (raw or {}).items():
            self.set(key, value)
        self.base_dir = Path(base_dir)
        self.validate()

    @classmethod
    def load(cls, path, overrides=None):
        path = Path(path)
        if not path.is_file():
            raise PipelineError(f"config file not found: {path}")
        raw = parse_config_text(path.read_text(encoding="utf-8"), str(path))
        raw.update(overrides or {})
        return cls(raw, path.parent)

    def set(self, key, value):
        if key not in SCHEMA:
            raise PipelineError(f"unknown config key {key!r}")
        parser = SCHEMA[key][0]
        try:
            self.values[key] = parser(value)
        except ValueError as exc:
            raise PipelineError(f"bad value for {key}: {exc}") from None

    def validate(self):
        for key, lo in _RANGES.items():
            if self.values[key] < lo:
                raise PipelineError(f"{key} must be >= {lo}")
        if self.values["group_max"] < self.values["group_min"]:
            raise PipelineError("group_max must be >= group_min")
        if not (self.values["graph_branch"] or self.values["semantic_branch"]):
            raise PipelineError("at least one classifier branch must be enabled")
        for key in ("text_length", "keywords_per_text"):
            v = self.values[key]
            if len(v) != 2 or v[0] < 1 or v[1] < v[0]:
                raise PipelineError(f"{key} must be 'lo,hi' with 1 <= lo <= hi")
        if list(self.values["sweep_budgets"]) != sorted(self.values["sweep_budgets"]):
            raise PipelineError("sweep_budgets must be ascending")

    def __getitem__(self, key):
        return self.values[key]

    @property
    def workdir(self):
        return self.base_dir / self.values["workdir"]

    def path(self, key):
        return self.workdir / self.values[key]

    def model_dir(self, name=None):
        return self.workdir / self.values["models"] / (name or self.values["model"])

    def dumps(self):
        lines = []
        for key in SCHEMA:
            v = self.values[key]
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = str(v).lower()
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"


def stage_seed(seed, name):
    """Named derivation of a per-stage seed from the global seed."""
    digest = hashlib.sha256(f"advgraph:{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:4], "big") & 0x7FFFFFFF


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_inputs(paths):
    out = {}
    for name, p in paths.items():
        p = Path(p)
        out[name] = file_sha256(p / "manifest.json" if p.is_dir() else p)
    return out


def manifest_path(cfg, stage, model=None):
    name = f"{stage}.{model}.json" if model else f"{stage}.json"
    return cfg.workdir / "manifests" / name


def _jsonable(v):
    return list(v) if isinstance(v, tuple) else v


def write_manifest(cfg, stage, inputs, outputs, keys, seed_name=None, model=None):
    rec = {
        "stage": stage,
        "version": __version__,
        "backend": kernels.BACKEND,
        "seed": cfg["seed"],
        "stage_seed": stage_seed(cfg["seed"], seed_name) if seed_name else None,
        "config": {k: _jsonable(cfg[k]) for k in keys},
        "inputs": _hash_inputs(inputs),
        "outputs": _hash_inputs(outputs),
    }
    if model:
        rec["model"] = model
    path = manifest_path(cfg, stage, model)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(rec, sort_keys=True) + "\n", encoding="utf-8")
    return rec


def read_manifest(cfg, stage, model=None):
    path = manifest_path(cfg, stage, model)
    if not path.is_file():
        what = f"{stage} manifest" + (f" for model {model!r}" if model else "")
        raise PipelineError(f"missing {what}: run `advgraph {stage}` first")
    return json.loads(path.read_text(encoding="utf-8"))


def _require(path, what, stage):
    if not Path(path).exists():
        raise PipelineError(f"missing {what} ({path}): run `advgraph {stage}` first")
    return path


def _require_bundle(cfg):
    d = cfg.model_dir()
    if not (d / "manifest.json").is_file():
        raise PipelineError(f"missing model bundle {cfg['model']!r} ({d}): run `advgraph train-clf` first")
    return d


def _load_lexicon(cfg):
    return load_pinyin_lexicon(_require(cfg.path("lexicon"), "lexicon", "fixture"))


def _glyph_index(cfg, lex):
    """Glyph index over the charset: lexicon characters that also have a bitmap."""
    atlas = load_glyph_atlas(_require(cfg.path("atlas"), "glyph atlas", "fixture"))
    params = GlyphModelParams.load(_require(cfg.path("glyph_params"), "glyph model", "train-glyph"))
    charset = sorted((c for c in lex if c in atlas), key=ord)
    if len(charset) < len(lex):
        log.warning("%d lexicon characters have no glyph and are left out", len(lex) - len(charset))
    if not charset:
        raise PipelineError("no character appears in both the lexicon and the glyph atlas")
    return GlyphIndex(GlyphAtlas(atlas[c] for c in charset), params)


# -- stages --------------------------------------------------------------------------

def make_fixture(cfg):
    """Lexicon subset, synthetic glyph atlas (with triplet positives) and triplets."""
    cfg.workdir.mkdir(parents=True, exist_ok=True)
    seed = stage_seed(cfg["seed"], "fixture")
    lex = bundled_lexicon()
    chars, groups = homophone_charset(lex, cfg["charset_size"], seed, cfg["group_min"], cfg["group_max"])
    atlas, _ = grouped_glyph_atlas(groups, seed)
    augmented, triplets = synthetic_triplets(atlas, cfg["n_triplets"], seed, cfg["flip_rate"])
    lex.subset(chars).save(cfg.path("lexicon"))
    augmented.save(cfg.path("atlas"))
    save_triplets(triplets, cfg.path("triplets"))
    outs = {k: cfg.path(k) for k in ("lexicon", "atlas", "triplets")}
    write_manifest(cfg, "fixture", {}, outs,
                   ("charset_size", "group_min", "group_max", "n_triplets", "flip_rate"), "fixture")
    return list(outs.values())


def train_glyph(cfg):
    atlas = load_glyph_atlas(_require(cfg.path("atlas"), "glyph atlas", "fixture"))
    triplets = load_triplets(_require(cfg.path("triplets"), "triplet file", "fixture"))
    tc = GlyphTrainConfig(alpha=cfg["glyph_alpha"], lr=cfg["glyph_lr"], epochs=cfg["glyph_epochs"],
                          batch=cfg["glyph_batch"], seed=stage_seed(cfg["seed"], "glyph"),
                          dim=cfg["glyph_dim"])
    params, losses = train_glyph_model(atlas, triplets, tc)
    if losses:
        log.info("glyph triplet loss %.5f -> %.5f", losses[0], losses[-1])
    params.save(cfg.path("glyph_params"))
    write_manifest(cfg, "train-glyph", {"atlas": cfg.path("atlas"), "triplets": cfg.path("triplets")},
                   {"glyph_params": cfg.path("glyph_params")},
                   ("glyph_alpha", "glyph_lr", "glyph_epochs", "glyph_batch", "glyph_dim"), "glyph")
    return [cfg.path("glyph_params")]


def build_graph_stage(cfg):
    lex = _load_lexicon(cfg)
    gindex = _glyph_index(cfg, lex)
    g = build_graph(gindex.chars, lex, gindex, cfg["graph_k"])
    log.info("graph: %d nodes, %d edges", len(g.nodes), g.n_edges())
    save_graph(g, cfg.path("graph"))
    write_manifest(cfg, "build-graph", {k: cfg.path(k) for k in ("lexicon", "atlas", "glyph_params")},
                   {"graph": cfg.path("graph")}, ("graph_k",))
    return [cfg.path("graph")]


def embed_graph(cfg):
    g = load_graph(_require(cfg.path("graph"), "adversarial graph", "build-graph"))
    table, _ = node2vec_embed(g, cfg["n2v_dim"], cfg["n2v_walks"], cfg["n2v_length"], cfg["n2v_window"],
                              cfg["n2v_p"], cfg["n2v_q"], cfg["n2v_negatives"], cfg["n2v_epochs"],
                              cfg["n2v_lr"], stage_seed(cfg["seed"], "node2vec"), cfg["workers"])
    table.save(cfg.path("graph_emb"))
    keys = ("n2v_dim", "n2v_walks", "n2v_length", "n2v_window", "n2v_p", "n2v_q", "n2v_negatives",
            "n2v_epochs", "n2v_lr")
    write_manifest(cfg, "embed-graph", {"graph": cfg.path("graph")}, {"graph_emb": cfg.path("graph_emb")},
                   keys, "node2vec")
    return [cfg.path("graph_emb")]


def synth(cfg):
    g = load_graph(_require(cfg.path("graph"), "adversarial graph", "build-graph"))
    seed = stage_seed(cfg["seed"], "synth")
    try:
        keywords, fillers = choose_keywords(g, cfg["classes"], cfg["keywords_per_class"], seed,
                                            filler_distance=cfg["filler_distance"])
        if not fillers:
            raise SynthError("no filler characters left at the requested distance from the keywords")
        spec = SyntheticSpec(cfg["classes"], keywords, fillers, cfg["texts_per_class"],
                             cfg["test_per_class"], cfg["text_length"], cfg["keywords_per_text"],
                             cfg["obfuscation_rate"])
        train, test, obf = synth_corpus(spec, g, seed)
    except SynthError as exc:
        raise PipelineError(f"synth: {exc}") from None
    for key, corpus in (("train", train), ("test", test), ("obf", obf)):
        save_corpus(corpus, cfg.path(key))
    with open(cfg.path("keywords"), "w", encoding="utf-8") as f:
        for c, ks in enumerate(keywords):
            f.write(f"{c}\t{''.join(ks)}\n")
        f.write(f"filler\t{''.join(fillers)}\n")
    outs = {k: cfg.path(k) for k in ("train", "test", "obf", "keywords")}
    write_manifest(cfg, "synth", {"graph": cfg.path("graph")}, outs,
                   ("classes", "keywords_per_class", "filler_distance", "texts_per_class",
                    "test_per_class", "text_length", "keywords_per_text", "obfuscation_rate"), "synth")
    return list(outs.values())


def embed_corpus(cfg):
    train = load_corpus(_require(cfg.path("train"), "training corpus", "synth"))
    table = sgns_train(corpus_to_sequences(train), cfg["sem_dim"], cfg["sem_window"], cfg["sem_negatives"],
                       cfg["sem_epochs"], cfg["sem_lr"], stage_seed(cfg["seed"], "semantic"))
    table.save(cfg.path("semantic_emb"))
    write_manifest(cfg, "embed-corpus", {"train": cfg.path("train")},
                   {"semantic_emb": cfg.path("semantic_emb")},
                   ("sem_dim", "sem_window", "sem_negatives", "sem_epochs", "sem_lr"), "semantic")
    return [cfg.path("semantic_emb")]


def train_clf(cfg):
    train = load_corpus(_require(cfg.path("train"), "training corpus", "synth"))
    inputs = {"train": cfg.path("train")}
    gt = st = None
    if cfg["graph_branch"]:
        gt = EmbeddingTable.load(_require(cfg.path("graph_emb"), "graph embedding", "embed-graph"))
        inputs["graph_emb"] = cfg.path("graph_emb")
    if cfg["semantic_branch"]:
        st = EmbeddingTable.load(_require(cfg.path("semantic_emb"), "semantic embedding", "embed-corpus"))
        inputs["semantic_emb"] = cfg.path("semantic_emb")
    tc = ClassifierTrainConfig(lr=cfg["clf_lr"], epochs=cfg["clf_epochs"], batch=cfg["clf_batch"],
                               seed=stage_seed(cfg["seed"], "classifier"), n_classes=cfg["classes"],
                               widths=cfg["clf_widths"], n_filters=cfg["clf_filters"],
                               weight_decay=cfg["weight_decay"])
    try:
        bundle, losses = train_classifier(train, gt, st, tc)
    except ClassifierError as exc:
        raise PipelineError(f"train-clf: {exc}") from None
    keys = ("classes", "clf_lr", "clf_epochs", "clf_batch", "clf_filters", "clf_widths",
            "weight_decay", "graph_branch", "semantic_branch")
    settings = {"seed": cfg["seed"], "config": {k: _jsonable(cfg[k]) for k in keys},
                "inputs": _hash_inputs(inputs)}
    config_hash = hashlib.sha256(json.dumps(settings, sort_keys=True).encode()).hexdigest()
    out = cfg.model_dir()
    bundle.save(out, {"final_train_loss": losses[-1], "config_sha256": config_hash})
    write_manifest(cfg, "train-clf", inputs, {"bundle": out}, keys, "classifier", cfg["model"])
    return [out]


def _attack_config(cfg, budget=None):
    external = load_variant_file(cfg.path("variants")) if cfg["variants"] else {}
    return AttackConfig(cfg["attack_budget"] if budget is None else budget, cfg["attack_source"],
                        external, stage_seed(cfg["seed"], "attack"))


def _attack_inputs(cfg, bundle_dir):
    inputs = {"bundle": bundle_dir, "test": cfg.path("test"), "graph": cfg.path("graph")}
    if cfg["variants"]:
        inputs["variants"] = cfg.path("variants")
    return inputs


def attack_stage(cfg):
    bundle_dir = _require_bundle(cfg)
    test = load_corpus(_require(cfg.path("test"), "test corpus", "synth"))
    g = load_graph(_require(cfg.path("graph"), "adversarial graph", "build-graph"))
    model = ModelBundle.load(bundle_dir)
    try:
        report = attack_corpus(test, model, g, _attack_config(cfg), cfg["workers"],
                               cfg["attack_limit"] or None)
    except AttackError as exc:
        raise PipelineError(f"attack: {exc}") from None
    out = bundle_dir / "attack.jsonl"
    report.save(out)
    write_manifest(cfg, "attack", _attack_inputs(cfg, bundle_dir), {"attack": out},
                   ("attack_budget", "attack_source", "attack_limit"), "attack", cfg["model"])
    return [out]


def evaluate(cfg):
    bundle_dir = _require_bundle(cfg)
    attack_path = bundle_dir / "attack.jsonl"
    if not attack_path.is_file():
        raise PipelineError(f"missing attack report for model {cfg['model']!r}: run `advgraph attack` first")
    test = load_corpus(_require(cfg.path("test"), "test corpus", "synth"))
    obf = load_corpus(_require(cfg.path("obf"), "obfuscated test corpus", "synth"))
    model = ModelBundle.load(bundle_dir)
    lex = _load_lexicon(cfg)
    gindex = _glyph_index(cfg, lex)
    report = AttackReport.load(attack_path)
    clean, obfr = clean_eval(model, test), clean_eval(model, obf)
    rob = robustness_report(report, gindex, lex, model.sem_table)
    rec = {
        "model": cfg["model"],
        "clean_accuracy": clean.accuracy,
        "avg_conf": clean.avg_conf,
        "obfuscated_accuracy": obfr.accuracy,
        "asr": rob.asr,
        "avg_perturbation": rob.avg_perturbation,
        "avg_perturbation_all": avg_perturbation(report, "all"),
        "adversarial_similarity": rob.adversarial_similarity,
        "semantic_similarity_proxy": rob.semantic_similarity_proxy,
        "mean_queries": rob.mean_queries,
        "n_attacked": rob.n_attacked,
    }
    outs = {"evaluation": bundle_dir / "evaluation.json"}
    try:
        cdf = sensitivity_distribution(report)
    except EvaluationError:
        cdf = None
    rec["sensitivity_median"] = None if cdf is None else cdf.median
    if cdf is not None:
        write_xy([(x, (i + 1) / len(cdf.samples)) for i, x in enumerate(cdf.samples)],
                 bundle_dir / "sensitivity.xy", ("confidence_drop", "cdf"))
        outs["sensitivity"] = bundle_dir / "sensitivity.xy"
    outs["evaluation"].write_text(json.dumps(rec, sort_keys=True) + "\n", encoding="utf-8")
    inputs = _attack_inputs(cfg, bundle_dir)
    inputs.update({"obf": cfg.path("obf"), "attack": attack_path, "lexicon": cfg.path("lexicon"),
                   "atlas": cfg.path("atlas"), "glyph_params": cfg.path("glyph_params")})
    write_manifest(cfg, "evaluate", inputs, outs, (), None, cfg["model"])
    return list(outs.values())


def sweep(cfg):
    bundle_dir = _require_bundle(cfg)
    test = load_corpus(_require(cfg.path("test"), "test corpus", "synth"))
    g = load_graph(_require(cfg.path("graph"), "adversarial graph", "build-graph"))
    model = ModelBundle.load(bundle_dir)
    try:
        rows = budget_sweep(test, model, g, cfg["sweep_budgets"], _attack_config(cfg),
                            cfg["attack_limit"] or None, cfg["workers"])
    except (AttackError, EvaluationError) as exc:
        raise PipelineError(f"sweep: {exc}") from None
    out = bundle_dir / "sweep.xy"
    write_xy(rows, out, ("budget", "asr"))
    write_manifest(cfg, "sweep", _attack_inputs(cfg, bundle_dir), {"sweep": out},
                   ("sweep_budgets", "attack_source", "attack_limit"), "attack", cfg["model"])
    return [out]


_SHARED_UPSTREAM = ("test", "obf", "graph", "lexicon", "atlas", "glyph_params", "variants")


def report(cfg):
    """Combine per-model evaluations after checking their provenance chains agree."""
    names = cfg["report_models"]
    if not names:
        raise PipelineError("report_models is empty")
    recs, inputs, seen = [], {}, {}
    for name in names:
        man = read_manifest(cfg, "evaluate", name)
        bundle_dir = cfg.model_dir(name)
        current = {
            "bundle": bundle_dir / "manifest.json",
            "attack": bundle_dir / "attack.jsonl",
            "evaluation": bundle_dir / "evaluation.json",
        }
        for key, path in current.items():
            recorded = man["outputs"].get(key) or man["inputs"].get(key)
            if not path.is_file() or file_sha256(path) != recorded:
                raise PipelineError(f"model {name!r}: {key} changed since `advgraph evaluate` ran")
        clf = read_manifest(cfg, "train-clf", name)
        if clf["outputs"]["bundle"] != man["inputs"]["bundle"]:
            raise PipelineError(f"model {name!r}: bundle does not match its train-clf manifest")
        upstream = {k: v for k, v in man["inputs"].items() if k in _SHARED_UPSTREAM}
        upstream.update({k: v for k, v in clf["inputs"].items()})
        for key, h in upstream.items():
            if key in seen and seen[key][1] != h:
                raise PipelineError(f"manifests disagree on upstream {key}: models "
                                    f"{seen[key][0]!r} and {name!r} used different inputs")
            seen.setdefault(key, (name, h))
        recs.append(json.loads((bundle_dir / "evaluation.json").read_text(encoding="utf-8")))
        inputs[f"evaluation.{name}"] = bundle_dir / "evaluation.json"
    cols = ("model", "clean_accuracy", "avg_conf", "obfuscated_accuracy", "asr", "avg_perturbation",
            "adversarial_similarity", "semantic_similarity_proxy", "mean_queries")
    table = format_table(cols, [[r[c] for c in cols] for r in recs])
    out = cfg.path("report")
    out.write_text(table, encoding="utf-8")
    write_manifest(cfg, "report", inputs, {"report": out}, ("report_models",))
    return [out]


@dataclass(frozen=True)
class Stage:
    name: str
    run: object
    per_model: bool = False


STAGES = {s.name: s for s in (
    Stage("fixture", make_fixture),
    Stage("train-glyph", train_glyph),
    Stage("build-graph", build_graph_stage),
    Stage("embed-graph", embed_graph),
    Stage("synth", synth),
    Stage("embed-corpus", embed_corpus),
    Stage("train-clf", train_clf, True),
    Stage("attack", attack_stage, True),
    Stage("evaluate", evaluate, True),
    Stage("sweep", sweep, True),
    Stage("report", report),
)}

SHARED_ORDER = ("fixture", "train-glyph", "build-graph", "embed-graph", "synth", "embed-corpus")
MODEL_ORDER = ("train-clf", "attack", "evaluate", "sweep")


def run_stage(command, cfg):
    if command not in STAGES:
        raise PipelineError(f"unknown command {command!r}")
    log.info("stage %s (seed %d, backend %s)", command, cfg["seed"], kernels.BACKEND)
    try:
        return STAGES[command].run(cfg)
    except (OSError, ValueError) as exc:
        raise PipelineError(f"{command}: {exc}") from exc


def with_overrides(cfg, **overrides):
    raw = dict(cfg.values)
    raw.update(overrides)
    return PipelineConfig(raw, cfg.base_dir)


def run_all(cfg, models=(("defended", {}), ("baseline", {"graph_branch": False})), sweep_stage=True):
    """Shared stages once, then the per-model stages for each (name, overrides), then the report."""
    for stage in SHARED_ORDER:
        run_stage(stage, cfg)
    for name, extra in models:
        mcfg = with_overrides(cfg, model=name, **extra)
        for stage in MODEL_ORDER:
            if stage == "sweep" and not sweep_stage:
                continue
            run_stage(stage, mcfg)
    run_stage("report", with_overrides(cfg, report_models=tuple(n for n, _ in models)))


def load_evaluation(cfg, model):
    path = cfg.model_dir(model) / "evaluation.json"
    return json.loads(_require(path, f"evaluation of {model!r}", "evaluate").read_text(encoding="utf-8"))


def artifact_digests(workdir):
    """sha256 of every file under ``workdir`` keyed by relative path."""
    root = Path(workdir)
    out = {}
    for dirpath, _, files in os.walk(root):
        for fn in files:
            p = Path(dirpath) / fn
            out[str(p.relative_to(root))] = file_sha256(p)
    return dict(sorted(out.items()))


def fixture_config_text(**overrides):
    """Config for the tiny fixture: 200 characters, 400 texts across all splits."""
    values = {"texts_per_class": 150, "test_per_class": 25, "n_triplets": 300, "glyph_epochs": 2,
              "clf_epochs": 20}
    values.update(overrides)
    lines = ["# tiny fixture: 300 train, 50 clean test and 50 obfuscated texts"]
    lines += [f"{k} = {','.join(map(str, v)) if isinstance(v, tuple) else v}" for k, v in values.items()]
    return "\n".join(lines) + "\n"

