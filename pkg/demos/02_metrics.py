"""Character error rate and hotword recall on a few hand-made hypotheses.

Run:  python demos/02_metrics.py
"""

from seaco.evaluation import cer, evaluate

refs = {
    "u1": [5, 6, 7, 8],     # hotword 6 7 present
    "u2": [9, 6, 7, 3],     # hotword 6 7 present
    "u3": [4, 4, 10, 11],   # hotword 10 11 present
}
plain = {"u1": [5, 6, 9, 8], "u2": [9, 6, 7, 3], "u3": [4, 4, 12, 11]}
biased = {"u1": [5, 6, 7, 8], "u2": [9, 6, 7, 6, 7], "u3": [4, 4, 10, 11]}
hotwords = [[6, 7], [10, 11]]

print("CER of one substitution in four tokens:", cer(refs["u1"], plain["u1"]))

# flags for rarely recalled hotwords come from the plain hypotheses
report = evaluate(refs, biased, hotwords, base_hyps=plain)
print(report.format())
# 6 7 is recalled twice but predicted three times, so its precision is 2/3.
# 10 11 had base recall 0 and is therefore counted in the R1 averages.
