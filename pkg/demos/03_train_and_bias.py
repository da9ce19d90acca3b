"""Train a backbone and a bias stack on the synthetic corpus, then measure biasing.

The corpus hides ten rare tokens inside designated phrases.  Each rare
token sounds almost like a common one, so the plain recogniser mostly
writes the common twin.  Contextual decoding receives the phrase list.

Run:  python demos/03_train_and_bias.py [--quick] [--save DIR]
"""

import argparse
import time
from pathlib import Path

from seaco.backbone import Schedule
from seaco.bias import BiasSchedule
from seaco.corpus import SyntheticSpec, generate_corpus, save_corpus_dir
from seaco.evaluation import corpus_cer
from seaco.hotwords import SamplingConfig
from seaco.inference import MergeConfig
from seaco.pipeline import (
    biasing_effect,
    recognize_split,
    save_model,
    train_asr,
    train_bias_stack,
)

parser = argparse.ArgumentParser()
parser.add_argument("--quick", action="store_true", help="few epochs, for a smoke run")
parser.add_argument("--save", help="directory for the corpus and both checkpoints")
args = parser.parse_args()
epochs = 2 if args.quick else 20

corpus = generate_corpus(SyntheticSpec())
vocab = corpus.world.vocab
print(f"{len(corpus.train)} train / {len(corpus.dev)} dev / {len(corpus.test)} test utterances")
print("designated phrases:", [" ".join(vocab.decode(h)) for h in corpus.hotwords][:4], "...")

start = time.perf_counter()
asr, res = train_asr(corpus, schedule=Schedule(epochs=epochs, log_every=0))
dev = recognize_split(asr, corpus, corpus.dev)
dev_cer = corpus_cer([u.tokens for u in corpus.dev], [dev[u.id] for u in corpus.dev])
print(f"backbone: {res.steps} steps, {res.seconds:.0f}s, dev CER {dev_cer:.4f}")

biased, bres = train_bias_stack(corpus, asr, "default", SamplingConfig(),
                                BiasSchedule(epochs=epochs, log_every=0))
print(f"bias stack: {bres.steps} steps, {bres.seconds:.0f}s, final loss {bres.losses[-1]:.3f}")

effect = biasing_effect(biased, corpus, corpus.test, corpus.hotwords,
                        MergeConfig(asf_k=len(corpus.hotwords)))
print(f"\ntest CER      plain {effect.base.cer:.4f}   biased {effect.biased.cer:.4f}")
print(f"R1 recall     plain {effect.base.r1[0]:.3f}    biased {effect.biased.r1[0]:.3f}")
print(f"all recall    plain {effect.base.overall[0]:.3f}    biased {effect.biased.overall[0]:.3f}")
print(f"total time {time.perf_counter() - start:.0f}s")

if args.save:
    out = Path(args.save)
    save_corpus_dir(corpus, out / "data")
    save_model(asr, out / "asr.ckpt")
    save_model(biased, out / "bias.ckpt")
    print("saved to", out)
