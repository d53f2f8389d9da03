"""
Caption metrics by hand
=======================

BLEU pools clipped n-gram counts over the corpus, ROUGE-L uses the longest
common subsequence, CIDEr-D compares tf-idf n-gram vectors, and the METEOR
variant here aligns exact unigrams only.
"""

from changecap import evaluate_captions
from changecap.metrics import bleu_n, meteor_sentence, rouge_l

S = str.split

print(bleu_n([S("the the the the")], [[S("the cat")]], 1))
print(rouge_l([S("a b c d")], [[S("a c b d")]]))
print(meteor_sentence(S("a b c d"), S("a b c d")), 1 - 0.5 / 4 ** 3)

###############################################################################
# A small corpus of three images.

cands = [S("many houses are built in the north"),
         S("the scene is unchanged"),
         S("a road appears in the east")]
refs = [[S("many houses are built in the north"), S("new houses are constructed in the north")],
        [S("there is no change"), S("the scene is unchanged")],
        [S("a new road is built in the west")]]
print(evaluate_captions(cands, refs, ids=["a", "b", "c"]).to_json())
