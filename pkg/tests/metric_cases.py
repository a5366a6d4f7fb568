"""Candidate/reference pairs with exact expected ROUGE and BLEU values."""
import math
from fractions import Fraction as Fr


def _prf(p, r):
    p, r = Fr(p), Fr(r)
    return (float(p), float(r), float(2 * p * r / (p + r)) if p + r else 0.0)


# Frozen output of an independent exact-arithmetic implementation
# (brute-force LCS, Fraction n-gram counts); several rows were also checked by hand.
# (candidate, reference, rouge1 (p, r, f), rouge2, rougeL, (bleu1..bleu4))
METRIC_TABLE = [
    ("the cat", "the cat sat", _prf(1, Fr(2, 3)), _prf(1, Fr(1, 2)), _prf(1, Fr(2, 3)),
     (math.exp(-0.5), math.exp(-0.5), 0.0, 0.0)),
    ("a b c d", "a c d b", _prf(1, 1), _prf(Fr(1, 3), Fr(1, 3)), _prf(Fr(3, 4), Fr(3, 4)),
     (1.0, math.sqrt(1 / 3), 0.0, 0.0)),
    ("the the the", "the cat", _prf(Fr(1, 3), Fr(1, 2)), _prf(0, 0), _prf(Fr(1, 3), Fr(1, 2)),
     (1 / 3, 0.0, 0.0, 0.0)),
    ("swollen tonsils with white spots", "swollen tonsils with white spots",
     _prf(1, 1), _prf(1, 1), _prf(1, 1), (1.0, 1.0, 1.0, 1.0)),
    ("fever rash", "cough cold", _prf(0, 0), _prf(0, 0), _prf(0, 0), (0.0, 0.0, 0.0, 0.0)),
    ("What causes Fever?", "what causes fever", _prf(1, 1), _prf(1, 1), _prf(1, 1),
     (1.0, 1.0, 1.0, 0.0)),
    ("w x y z", "z q r s", _prf(Fr(1, 4), Fr(1, 4)), _prf(0, 0), _prf(Fr(1, 4), Fr(1, 4)),
     (0.25, 0.0, 0.0, 0.0)),
    ("to be or not to be", "to be is to be", _prf(Fr(2, 3), Fr(4, 5)), _prf(Fr(2, 5), Fr(1, 2)),
     _prf(Fr(2, 3), Fr(4, 5)), (2 / 3, math.sqrt(4 / 15), 0.0, 0.0)),
    ("the patient has a swollen red eye today", "the patient has a swollen eye",
     _prf(Fr(3, 4), 1), _prf(Fr(4, 7), Fr(4, 5)), _prf(Fr(3, 4), 1),
     (0.75, 0.6546536707, 0.5984084806, 0.5410822691)),
    ("fever", "high fever today", _prf(1, Fr(1, 3)), _prf(0, 0), _prf(1, Fr(1, 3)),
     (math.exp(-2), 0.0, 0.0, 0.0)),
    ("is the rash on my arm contagious", "is this itchy rash on the arm contagious",
     _prf(Fr(6, 7), Fr(3, 4)), _prf(Fr(1, 3), Fr(2, 7)), _prf(Fr(5, 7), Fr(5, 8)),
     (0.7430381998, 0.4633657281, 0.0, 0.0)),
    ("a b a b", "b a b a", _prf(1, 1), _prf(Fr(2, 3), Fr(2, 3)), _prf(Fr(3, 4), Fr(3, 4)),
     (1.0, math.sqrt(2 / 3), (2 / 3) ** (1 / 3), 0.0)),
]
