"""``glimpsekit`` command line: prep, train, decode, eval and an interactive chat loop.

Configuration is a ``key=value`` file (``#`` starts a comment) given with
``--config``; positional ``key=value`` arguments override it.  Unknown keys
are rejected.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import corpus, decode, evalkit, nn, train
from .core import GlimpseKitError, InsufficientData, NonFinite, OracleModel, Vocabulary
from .glimpse import perplexity
from .seeding import derive_rng, derive_seed

log = logging.getLogger("glimpsekit")

EXIT_OK, EXIT_MALFORMED, EXIT_NONFINITE, EXIT_VOCAB, EXIT_DATA = 0, 2, 3, 4, 5


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


SCHEMA = {
    "seed": (int, 0),
    "out": (str, "out"),
    "data.threads": (str, ""),
    "data.oracle": (str, ""),
    "data.corpus": (str, ""),
    "data.vocab": (str, ""),
    "data.prompts": (str, ""),
    "prep.n_pairs": (int, 1000),
    "prep.max_len": (int, 64),
    "prep.vocab_size": (int, 5000),
    "model.checkpoint": (str, ""),
    "model.embed_dim": (int, 32),
    "model.hidden_dim": (int, 64),
    "model.num_layers": (int, 1),
    "model.attention": (str, "source_only"),
    "model.carry_encoder_state": (_bool, True),
    "glimpse.k": (int, 0),
    "train.steps": (int, 1000),
    "train.batch_size": (int, 32),
    "train.lr": (float, 1e-2),
    "train.optimizer": (str, "adam"),
    "train.log_every": (int, 50),
    "train.ckpt_every": (int, 0),
    "train.resume": (str, ""),
    "train.dev_fraction": (float, 0.05),
    "decode.strategy": (str, "backoff"),
    "decode.B": (int, 2),
    "decode.D": (int, 10),
    "decode.H": (int, 10),
    "decode.Q": (int, 15),
    "decode.alpha": (float, 0.8),
    "decode.max_segments": (int, 8),
    "decode.backoff_threshold_chars": (int, 40),
    "decode.beam_size": (int, 8),
    "decode.max_len": (int, 20),
    "decode.trace": (_bool, False),
    "eval.N": (int, 10),
    "eval.K": (int, 1),
    "eval.trials": (int, 1000),
    "eval.scheme": (str, "no_norm"),
    "eval.thresholds": (str, "20,40,60,80,100"),
    "eval.responses": (str, ""),
}


class ConfigError(GlimpseKitError):
    pass


@dataclass
class RunConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def build(cls, path: str | None, overrides=()) -> "RunConfig":
        raw = {}
        if path:
            for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{n}: expected key=value")
                k, v = line.split("=", 1)
                raw[k.strip()] = v.strip()
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            k, v = item.split("=", 1)
            raw[k.strip()] = v.strip()
        values = {k: default for k, (_, default) in SCHEMA.items()}
        for k, v in raw.items():
            if k not in SCHEMA:
                raise ConfigError(f"unknown config key {k!r}")
            try:
                values[k] = SCHEMA[k][0](v)
            except ValueError as exc:
                raise ConfigError(f"bad value for {k}: {exc}") from None
        return cls(values)

    @property
    def out(self) -> Path:
        return Path(self.values["out"])

    def model_config(self, vocab_size: int) -> nn.ModelConfig:
        return nn.ModelConfig(vocab_size=vocab_size, embed_dim=self["model.embed_dim"],
                              hidden_dim=self["model.hidden_dim"], num_layers=self["model.num_layers"],
                              attention=self["model.attention"],
                              carry_encoder_state=self["model.carry_encoder_state"])

    def decode_params(self) -> decode.DecodeParams:
        return decode.DecodeParams(B=self["decode.B"], D=self["decode.D"], H=self["decode.H"],
                                   Q=self["decode.Q"], alpha=self["decode.alpha"],
                                   max_segments=self["decode.max_segments"],
                                   backoff_threshold_chars=self["decode.backoff_threshold_chars"],
                                   beam_size=self["decode.beam_size"], max_len=self["decode.max_len"],
                                   seed=self["seed"])


class VocabMismatch(GlimpseKitError):
    pass


# ---------------------------------------------------------------------------


def _path(cfg: RunConfig, key: str, default_name: str) -> Path:
    return Path(cfg[key]) if cfg[key] else cfg.out / default_name


def _load_vocab(cfg: RunConfig) -> Vocabulary:
    if cfg["data.vocab"]:
        return Vocabulary.load(cfg["data.vocab"])
    if cfg["data.oracle"] and not (cfg.out / "vocab.txt").exists():
        return OracleModel.load(cfg["data.oracle"]).vocab
    return Vocabulary.load(cfg.out / "vocab.txt")


def _token_pairs(pairs, vocab):
    return [corpus.encode_pair(p, vocab) for p in pairs]


def _split_dev(items, fraction):
    n_dev = max(1, int(round(len(items) * fraction))) if len(items) > 1 else 0
    return items[:len(items) - n_dev], items[len(items) - n_dev:]


def load_model(cfg: RunConfig, vocab: Vocabulary):
    """The checkpoint named in the config, else the oracle."""
    if cfg["model.checkpoint"]:
        state, mcfg, k = train.load_state(cfg["model.checkpoint"])
        if mcfg.vocab_size != len(vocab):
            raise VocabMismatch(f"checkpoint expects {mcfg.vocab_size} tokens, vocabulary has {len(vocab)}")
        return nn.NeuralSeq2Seq(state.params, mcfg, vocab, k)
    if cfg["data.oracle"]:
        oracle = OracleModel.load(cfg["data.oracle"])
        if oracle.vocab.tokens != vocab.tokens:
            raise VocabMismatch("oracle vocabulary differs from the session vocabulary")
        return oracle
    raise ConfigError("set model.checkpoint or data.oracle")


def cmd_prep(cfg: RunConfig) -> int:
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    if cfg["data.threads"]:
        messages, bad = corpus.read_threads(cfg["data.threads"])
        if bad:
            log.warning("skipped %d malformed thread rows", bad)
        pairs = corpus.extract_pairs(messages)
        vocab = corpus.build_vocab(pairs, cfg["prep.vocab_size"])
    elif cfg["data.oracle"]:
        oracle = OracleModel.load(cfg["data.oracle"])
        rng = derive_rng(cfg["seed"], "prep")
        pairs, _ = corpus.synth_corpus(oracle, cfg["prep.n_pairs"], rng, cfg["prep.max_len"])
        vocab = oracle.vocab
        corpus.write_prompt_pool(out / "prompts.txt",
                                 [corpus.detokenize(p, vocab) for p in oracle.prompts])
    else:
        raise ConfigError("prep needs data.threads or data.oracle")
    corpus.write_pairs(out / "pairs.jsonl", pairs)
    vocab.save(out / "vocab.txt")
    print(f"wrote {len(pairs)} pairs and {len(vocab)} vocabulary entries to {out}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    vocab = _load_vocab(cfg)
    pairs = _token_pairs(corpus.read_pairs(_path(cfg, "data.corpus", "pairs.jsonl")), vocab)
    train_pairs, dev_pairs = _split_dev(pairs, cfg["train.dev_fraction"])
    if not train_pairs:
        raise InsufficientData("no training pairs")
    k = cfg["glimpse.k"] or None
    tcfg = train.TrainConfig(steps=cfg["train.steps"], batch_size=cfg["train.batch_size"], lr=cfg["train.lr"],
                             optimizer=cfg["train.optimizer"], glimpse_k=k,
                             seed=derive_seed(cfg["seed"], "train"), log_every=cfg["train.log_every"],
                             ckpt_every=cfg["train.ckpt_every"])
    if cfg["train.resume"]:
        state, mcfg, k_saved = train.load_state(cfg["train.resume"])
        if mcfg.vocab_size != len(vocab):
            raise VocabMismatch("resume checkpoint and vocabulary sizes differ")
        if k_saved != k:
            raise ConfigError(f"checkpoint was trained with glimpse.k={k_saved or 0}")
    else:
        mcfg = cfg.model_config(len(vocab))
        params = nn.init_params(mcfg, seed=derive_seed(cfg["seed"], "init"), dtype=np.float32)
        state = train.TrainState(params)
    examples = train.training_examples(train_pairs, vocab, k)
    ckpt = out / "checkpoint.glmp"

    def model_of(params):
        return nn.NeuralSeq2Seq(params, mcfg, vocab, k)

    logger = train.TrainLog(out / "train_log.csv", start_step=state.step)
    state = train.train(state, mcfg, examples, tcfg,
                        on_log=lambda step, loss: logger.write(step, loss),
                        on_checkpoint=lambda s: train.save_state(ckpt, s, mcfg, k))
    train.save_state(ckpt, state, mcfg, k)
    ppl = perplexity(model_of(state.params), dev_pairs or train_pairs)
    print(f"step {state.step}: dev perplexity {ppl:.4f}")
    return EXIT_OK


def _prompt_pool(cfg: RunConfig, vocab):
    path = _path(cfg, "data.prompts", "prompts.txt")
    texts = corpus.read_prompt_pool(path)
    return texts, [corpus.tokenize(t, vocab) for t in texts]


def cmd_decode(cfg: RunConfig, strategy: str) -> int:
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    vocab = _load_vocab(cfg)
    model = load_model(cfg, vocab)
    params = cfg.decode_params()
    texts, pool = _prompt_pool(cfg, vocab)
    with (out / "responses.jsonl").open("w", encoding="utf-8") as resp, \
            (out / "trace.jsonl").open("w", encoding="utf-8") as trace:
        for i, (text, src) in enumerate(zip(texts, pool)):
            res = decode.respond(model, src, strategy, params, pool, derive_rng(cfg["seed"], "decode", i))
            rec = {"prompt": text, "response": res["text"], "strategy": strategy,
                   "provenance": res["provenance"], "chars": len(res["text"]),
                   "tokens": len(res["tokens"]) - 2}
            if "baseline_text" in res:
                rec["baseline_chars"] = len(res["baseline_text"])
            resp.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
            for r in res["trace"]:
                trace.write(json.dumps({"prompt_index": i, **r}, ensure_ascii=False, sort_keys=True) + "\n")
    print(f"decoded {len(texts)} prompts with strategy={strategy}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, mode: str) -> int:
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    if mode == "lengths":
        path = _path(cfg, "eval.responses", "responses.jsonl")
        responses = [json.loads(ln)["response"] for ln in Path(path).read_text(encoding="utf-8").splitlines()
                     if ln.strip()]
        thresholds = [int(t) for t in cfg["eval.thresholds"].split(",") if t.strip()]
        rows = evalkit.length_stats(responses, thresholds)
        evalkit.write_length_report(out / "length_report.csv", rows)
        print("threshold  count  fraction")
        for th, count, frac in rows:
            print(f"{th:9d}  {count:5d}  {frac:.4f}")
        return EXIT_OK
    vocab = _load_vocab(cfg)
    pairs = _token_pairs(corpus.read_pairs(_path(cfg, "data.corpus", "pairs.jsonl")), vocab)
    model = load_model(cfg, vocab)
    if mode == "ppl":
        ppl = perplexity(model, pairs)
        (out / "ppl_report.json").write_text(json.dumps({"pairs": len(pairs), "perplexity": ppl}) + "\n")
        print(f"perplexity {ppl:.4f} over {len(pairs)} pairs")
        return EXIT_OK
    if mode == "nchoosek":
        N, K, trials = cfg["eval.N"], cfg["eval.K"], cfg["eval.trials"]
        name = cfg["eval.scheme"]
        if name == "random":
            scheme = evalkit.random_scorer
        else:
            scheme = evalkit.ScoringScheme(name, Q=cfg["decode.Q"])
        acc = evalkit.n_choose_k(model, pairs, N, K, scheme, trials, seed=derive_seed(cfg["seed"], "eval"))
        rep = evalkit.write_eval_report(out / "eval_report.json", name, N, K, trials, acc)
        print(f"{N}-choose-{K} [{name}] accuracy {acc:.4f} ± {rep['ci95']:.4f} over {trials} trials")
        return EXIT_OK
    raise ConfigError(f"unknown eval mode {mode!r}")


def cmd_chat(cfg: RunConfig, strategy: str, stdin=None, stdout=None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    vocab = _load_vocab(cfg)
    model = load_model(cfg, vocab)
    params = cfg.decode_params()
    try:
        _, pool = _prompt_pool(cfg, vocab)
    except FileNotFoundError:
        pool = list(getattr(model, "prompts", ()))
    show_trace = cfg["decode.trace"]
    while True:
        stdout.write("> ")
        stdout.flush()
        line = stdin.readline()
        if not line:
            stdout.write("\n")
            return EXIT_OK
        line = line.strip()
        if not line:
            continue
        if line.startswith("/trace"):
            show_trace = line.split()[-1] == "on"
            stdout.write(f"trace {'on' if show_trace else 'off'}\n")
            continue
        src = corpus.tokenize(line, vocab)
        if not src:
            continue
        rng = derive_rng(cfg["seed"], "chat:" + corpus.normalize(line))
        res = decode.respond(model, src, strategy, params, pool, rng)
        if show_trace:
            for r in res["trace"]:
                chosen = r["candidates"][r["chosen_index"]]
                stdout.write(f"  [round {r['round']}] " + " | ".join(
                    f"{c['text']!r} logp={c['logp']} S={c['S']}" for c in r["candidates"])
                    + f"  -> {chosen['text']!r}\n")
        stdout.write(f"{res['text']}  ({res['provenance']})\n")


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="glimpsekit", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=["prep", "train", "decode", "eval", "chat"])
    ap.add_argument("mode", nargs="?", help="eval mode: nchoosek, ppl or lengths")
    ap.add_argument("overrides", nargs="*", metavar="key=value")
    ap.add_argument("--config", help="key=value config file")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--strategy", choices=decode.STRATEGIES)
    ap.add_argument("--out", help="output directory")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_intermixed_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.overrides)
    if args.mode and "=" in args.mode:
        overrides.insert(0, args.mode)
        args.mode = None
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"out={args.out}")
    try:
        cfg = RunConfig.build(args.config, overrides)
        strategy = args.strategy or cfg["decode.strategy"]
        if args.command == "prep":
            return cmd_prep(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "decode":
            return cmd_decode(cfg, strategy)
        if args.command == "eval":
            return cmd_eval(cfg, args.mode or "nchoosek")
        return cmd_chat(cfg, strategy)
    except VocabMismatch as exc:
        log.error("%s", exc)
        return EXIT_VOCAB
    except NonFinite as exc:
        log.error("non-finite training state: %s", exc)
        return EXIT_NONFINITE
    except InsufficientData as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except (ConfigError, ValueError, KeyError, FileNotFoundError, GlimpseKitError) as exc:
        log.error("%s", exc)
        return EXIT_MALFORMED


if __name__ == "__main__":
    sys.exit(main())
