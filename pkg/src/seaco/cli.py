"""Command-line interface: ``seaco <subcommand> [options]``.

Progress goes to standard error; artifacts go only to the named files.
Every failure exits nonzero with a one-line cause.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .backbone import Schedule
from .bias import VARIANT_ALIASES, BiasSchedule
from .corpus import (
    SyntheticSpec,
    generate_corpus,
    load_corpus_dir,
    read_hotwords,
    read_transcripts,
    save_corpus_dir,
    write_transcripts,
)
from .evaluation import evaluate
from .hotwords import HotwordList, SamplingConfig
from .inference import MergeConfig, asf_filter, hotword_labels
from .pipeline import (
    SWEEP_HEADER,
    decode_split,
    load_model,
    save_model,
    sweep_hotword_count,
    train_asr,
    train_bias_stack,
)

log = logging.getLogger("seaco")


class CliError(Exception):
    pass


def _split(corpus, name: str):
    if name not in ("train", "dev", "test"):
        raise CliError(f"unknown split {name!r}")
    return getattr(corpus, name)


def _hotwords(args, corpus) -> HotwordList:
    if not getattr(args, "hotwords", None):
        return HotwordList()
    return HotwordList(read_hotwords(args.hotwords, corpus.world.vocab))


def cmd_gen_data(args) -> None:
    spec = SyntheticSpec(vocab_size=args.vocab_size, n_train=args.n_train, n_dev=args.n_dev,
                         n_test=args.n_test, rare_rate=args.rare_rate, seed=args.seed)
    save_corpus_dir(generate_corpus(spec), args.out)
    log.info("wrote corpus to %s", args.out)


def cmd_train_asr(args) -> None:
    corpus = load_corpus_dir(args.data)
    sched = Schedule(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                     sampling_factor=args.sampling_factor, seed=args.seed)
    model, res = train_asr(corpus, schedule=sched)
    save_model(model, args.out)
    log.info("trained backbone: %d steps in %.1fs, final loss %.4f", res.steps, res.seconds,
             res.losses[-1])


def cmd_train_bias(args) -> None:
    corpus = load_corpus_dir(args.data)
    backbone = load_model(args.asr)
    sampling = SamplingConfig(r_b=args.r_b, r_u=args.r_u, l_min=args.l_min, l_max=args.l_max,
                              seed=args.seed)
    sched = BiasSchedule(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                         seed=args.seed)
    model, res = train_bias_stack(corpus, backbone, args.variant, sampling, sched)
    save_model(model, args.out)
    log.info("trained bias stack (%s): %d steps in %.1fs, final loss %.4f",
             model.bias.variant, res.steps, res.seconds, res.losses[-1])


def _merge_config(args) -> MergeConfig:
    return MergeConfig(lam=args.lam, asf_enabled=not args.no_asf, asf_k=args.asf_k)


def cmd_decode(args) -> None:
    corpus = load_corpus_dir(args.data)
    model = load_model(args.model)
    utts = _split(corpus, args.split)
    results = decode_split(model, corpus, utts, _hotwords(args, corpus), _merge_config(args))
    write_transcripts(args.out, [(u.id, r.tokens) for u, r in zip(utts, results)],
                      corpus.world.vocab)
    log.info("decoded %d utterances to %s", len(utts), args.out)


def cmd_eval(args) -> None:
    corpus = load_corpus_dir(args.data)
    vocab = corpus.world.vocab
    refs = read_transcripts(args.ref, vocab) if args.ref else \
        {u.id: u.tokens for u in _split(corpus, args.split)}
    hyps = read_transcripts(args.hyp, vocab)
    hotwords = read_hotwords(args.hotwords, vocab) if args.hotwords else corpus.hotwords
    base = read_transcripts(args.base, vocab) if args.base else None
    report = evaluate(refs, hyps, hotwords, base)
    Path(args.out).write_text(report.format(lambda h: " ".join(vocab.decode(h))),
                              encoding="utf-8")
    log.info("CER %.4f, mean recall %.4f", report.cer, report.overall[0])


def _find(utts, uid: str):
    for u in utts:
        if u.id == uid:
            return u
    raise CliError(f"utterance {uid!r} not found")


def _one_utterance(args):
    corpus = load_corpus_dir(args.data)
    model = load_model(args.model)
    if model.bias is None:
        raise CliError(f"{args.model} has no bias stack")
    utt = _find(corpus.train + corpus.dev + corpus.test, args.utt)
    return corpus, model, utt


def cmd_filter_hotwords(args) -> None:
    from .backbone import infer
    from .bias import encode_hotwords
    from .numerics import Tensor, no_grad

    corpus, model, utt = _one_utterance(args)
    hotwords = _hotwords(args, corpus)
    with no_grad():
        out = infer(corpus.features(utt), model.params, model.backbone)
        Z = encode_hotwords(hotwords, model.params, model.bias)
        kept, scores, keep = asf_filter(Tensor(out.D.data[0]), Tensor(out.E.data[0]), Z,
                                        hotwords, model.params, model.bias, args.k)
    labels = hotword_labels(hotwords, corpus.world.vocab)
    lines = [f"{labels[i]}\t{scores[i]:.6g}" for i in keep]
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    log.info("kept %d of %d hotwords", len(keep), len(hotwords))


def cmd_dump_attention(args) -> None:
    corpus, model, utt = _one_utterance(args)
    hotwords = _hotwords(args, corpus)
    res = decode_split(model, corpus, [utt], hotwords, _merge_config(args))[0]
    labels = hotword_labels(hotwords, corpus.world.vocab)
    res.attention.hotword_labels = [labels[i] for i in res.kept]
    res.attention.save(args.out)
    log.info("attention matrix %s written to %s", res.attention.scores.shape, args.out)


def cmd_sweep(args) -> None:
    corpus = load_corpus_dir(args.data)
    model = load_model(args.model)
    if model.bias is None:
        raise CliError(f"{args.model} has no bias stack")
    hotwords = read_hotwords(args.hotwords, corpus.world.vocab) if args.hotwords \
        else corpus.hotwords
    n = len(hotwords)
    sizes = [int(eval_size(s, n)) for s in args.sizes.split(",")]
    rows = sweep_hotword_count(model, corpus, _split(corpus, args.split), hotwords, sizes,
                               asf_k=args.asf_k, lam=args.lam, seed=args.seed)
    Path(args.out).write_text("\n".join([SWEEP_HEADER] + [r.csv() for r in rows]) + "\n",
                              encoding="utf-8")
    for r in rows:
        log.info("size %d asf %d CER %.4f recall %.4f", r.size, r.asf, r.cer, r.recall)


def eval_size(text: str, n: int) -> int:
    """Parse a list size: an integer, or a multiple of the original size like ``5n``."""
    text = text.strip()
    if text.endswith("n"):
        return (int(text[:-1]) if text[:-1] else 1) * n
    return int(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="seaco", description="Toy contextual-biasing ASR pipeline")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(fn=fn)
        sp.add_argument("--seed", type=int, default=0)
        return sp

    g = add("gen-data", cmd_gen_data, "write a synthetic corpus directory")
    g.add_argument("--out", required=True)
    g.add_argument("--vocab-size", type=int, default=60)
    g.add_argument("--n-train", type=int, default=2000)
    g.add_argument("--n-dev", type=int, default=200)
    g.add_argument("--n-test", type=int, default=200)
    g.add_argument("--rare-rate", type=float, default=0.02)

    a = add("train-asr", cmd_train_asr, "train the backbone")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--epochs", type=int, default=20)
    a.add_argument("--batch-size", type=int, default=32)
    a.add_argument("--lr", type=float, default=1e-3)
    a.add_argument("--sampling-factor", type=float, default=0.75)

    b = add("train-bias", cmd_train_bias, "train the bias stack on a frozen backbone")
    b.add_argument("--data", required=True)
    b.add_argument("--asr", required=True, help="backbone checkpoint")
    b.add_argument("--out", required=True)
    b.add_argument("--variant", choices=sorted(VARIANT_ALIASES), default="default")
    b.add_argument("--epochs", type=int, default=20)
    b.add_argument("--batch-size", type=int, default=16)
    b.add_argument("--lr", type=float, default=1e-3)
    b.add_argument("--r-b", type=float, default=0.75)
    b.add_argument("--r-u", type=float, default=0.75)
    b.add_argument("--l-min", type=int, default=2)
    b.add_argument("--l-max", type=int, default=8)

    def merge_flags(sp):
        sp.add_argument("--hotwords", help="hotword list file (default: <blank> only)")
        sp.add_argument("--lambda", dest="lam", type=float, default=1.0)
        sp.add_argument("--asf-k", type=int, default=50)
        sp.add_argument("--no-asf", action="store_true")

    d = add("decode", cmd_decode, "contextual decoding of a split")
    d.add_argument("--data", required=True)
    d.add_argument("--model", required=True)
    d.add_argument("--split", default="test")
    d.add_argument("--out", required=True)
    merge_flags(d)

    e = add("eval", cmd_eval, "score a hypothesis file")
    e.add_argument("--data", required=True)
    e.add_argument("--hyp", required=True)
    e.add_argument("--ref", help="reference file (default: the split's transcripts)")
    e.add_argument("--split", default="test")
    e.add_argument("--base", help="plain-decoding hypotheses used to flag R1 hotwords")
    e.add_argument("--hotwords", help="hotword list (default: the corpus list)")
    e.add_argument("--out", required=True)

    f = add("filter-hotwords", cmd_filter_hotwords, "attention score filtering for one utterance")
    f.add_argument("--data", required=True)
    f.add_argument("--model", required=True)
    f.add_argument("--utt", required=True)
    f.add_argument("--hotwords", required=True)
    f.add_argument("--k", type=int, default=50)
    f.add_argument("--out", required=True)

    t = add("dump-attention", cmd_dump_attention, "write the attention matrix of one utterance")
    t.add_argument("--data", required=True)
    t.add_argument("--model", required=True)
    t.add_argument("--utt", required=True)
    t.add_argument("--out", required=True)
    merge_flags(t)

    s = add("sweep-hotword-count", cmd_sweep, "pad the list with distractors and rescore")
    s.add_argument("--data", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--hotwords", help="original list (default: the corpus list)")
    s.add_argument("--sizes", default="n,5n,20n", help="comma list of sizes, e.g. n,5n,20n or 10,50")
    s.add_argument("--split", default="test")
    s.add_argument("--asf-k", type=int, help="ASF k (default: original list size)")
    s.add_argument("--lambda", dest="lam", type=float, default=1.0)
    s.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        args.fn(args)
    except (CliError, OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"seaco {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
