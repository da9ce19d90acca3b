"""Pad the phrase list with distractors and watch attention score filtering prune it.

Needs the directory written by ``03_train_and_bias.py --save DIR``.

Run:  python demos/04_attention_filtering.py DIR
"""

import sys
from pathlib import Path

import numpy as np

from seaco.backbone import infer
from seaco.bias import encode_hotwords
from seaco.corpus import load_corpus_dir
from seaco.hotwords import HotwordList
from seaco.inference import asf_filter, hotword_labels
from seaco.numerics import Tensor, no_grad
from seaco.pipeline import load_model, make_distractors, sweep_hotword_count

root = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/demo")
corpus = load_corpus_dir(root / "data")
model = load_model(root / "bias.ckpt")
vocab = corpus.world.vocab
n = len(corpus.hotwords)

rng = np.random.default_rng(0)
distractors = make_distractors(4 * n, [u.tokens for u in corpus.test], len(vocab), rng,
                               exclude=corpus.hotwords)
padded = HotwordList(list(corpus.hotwords) + distractors)

# one test utterance that contains a designated phrase
utt = next(u for u in corpus.test if any(
    tuple(h) == tuple(u.tokens[i:i + len(h)]) for h in corpus.hotwords
    for i in range(len(u.tokens))))
print("utterance:", " ".join(vocab.decode(utt.tokens)))

with no_grad():
    out = infer(corpus.features(utt), model.params, model.backbone)
    Z = encode_hotwords(padded, model.params, model.bias)
    _, scores, keep = asf_filter(Tensor(out.D.data[0]), Tensor(out.E.data[0]), Z, padded,
                                 model.params, model.bias, k=5)
labels = hotword_labels(padded, vocab)
print("\ntop attended entries (score = attention summed over steps):")
for i in sorted(keep, key=lambda i: -scores[i]):
    tag = "phrase" if 0 < i <= n else ("default" if i == 0 else "distractor")
    print(f"  {scores[i]:6.3f}  {labels[i]:<24} {tag}")

print("\nsize,asf,cer,recall")
for row in sweep_hotword_count(model, corpus, corpus.test, corpus.hotwords,
                               [n, 5 * n, 20 * n], asf_k=n):
    print(row.csv())
