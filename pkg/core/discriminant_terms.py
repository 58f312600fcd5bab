"""
Frozen term table of the 2x2 rank-one discriminant under iid data.

Each row is (coefficient, mu2 exponent, mu4 exponent, t00 exponent, t01 exponent,
t11 exponent). The polynomial vanishes on teachers at which two rank-one critical
points collide. TERMS_SHA256 is the SHA-256 of the rows
rendered as space-separated integers joined by newlines, and is verified on import.
"""
import hashlib

TERMS = (
    (729, 24, 0, 3, 0, 3),
    (1458, 22, 1, 4, 0, 2),
    (1458, 22, 1, 2, 0, 4),
    (-2187, 20, 2, 4, 2, 0),
    (972, 20, 2, 5, 0, 1),
    (486, 20, 2, 2, 2, 2),
    (1458, 20, 2, 3, 0, 3),
    (-2187, 20, 2, 0, 2, 4),
    (972, 20, 2, 1, 0, 5),
    (216, 18, 3, 6, 0, 0),
    (-5184, 18, 3, 3, 2, 1),
    (-486, 18, 3, 4, 0, 2),
    (-5184, 18, 3, 1, 2, 3),
    (-486, 18, 3, 2, 0, 4),
    (216, 18, 3, 0, 0, 6),
    (3132, 16, 4, 4, 2, 0),
    (-864, 16, 4, 5, 0, 1),
    (6912, 16, 4, 1, 4, 1),
    (-11448, 16, 4, 2, 2, 2),
    (-1377, 16, 4, 3, 0, 3),
    (3132, 16, 4, 0, 2, 4),
    (-864, 16, 4, 1, 0, 5),
    (-216, 14, 5, 6, 0, 0),
    (4608, 14, 5, 2, 4, 0),
    (2880, 14, 5, 3, 2, 1),
    (-36, 14, 5, 4, 0, 2),
    (4608, 14, 5, 0, 4, 2),
    (2880, 14, 5, 1, 2, 3),
    (-36, 14, 5, 2, 0, 4),
    (-216, 14, 5, 0, 0, 6),
    (-2034, 12, 6, 4, 2, 0),
    (-4096, 12, 6, 0, 6, 0),
    (360, 12, 6, 5, 0, 1),
    (-1536, 12, 6, 1, 4, 1),
    (7620, 12, 6, 2, 2, 2),
    (604, 12, 6, 3, 0, 3),
    (-2034, 12, 6, 0, 2, 4),
    (360, 12, 6, 1, 0, 5),
    (72, 10, 7, 6, 0, 0),
    (-1536, 10, 7, 2, 4, 0),
    (-960, 10, 7, 3, 2, 1),
    (12, 10, 7, 4, 0, 2),
    (-1536, 10, 7, 0, 4, 2),
    (-960, 10, 7, 1, 2, 3),
    (12, 10, 7, 2, 0, 4),
    (72, 10, 7, 0, 0, 6),
    (348, 8, 8, 4, 2, 0),
    (-96, 8, 8, 5, 0, 1),
    (768, 8, 8, 1, 4, 1),
    (-1272, 8, 8, 2, 2, 2),
    (-153, 8, 8, 3, 0, 3),
    (348, 8, 8, 0, 2, 4),
    (-96, 8, 8, 1, 0, 5),
    (-8, 6, 9, 6, 0, 0),
    (192, 6, 9, 3, 2, 1),
    (18, 6, 9, 4, 0, 2),
    (192, 6, 9, 1, 2, 3),
    (18, 6, 9, 2, 0, 4),
    (-8, 6, 9, 0, 0, 6),
    (-27, 4, 10, 4, 2, 0),
    (12, 4, 10, 5, 0, 1),
    (6, 4, 10, 2, 2, 2),
    (18, 4, 10, 3, 0, 3),
    (-27, 4, 10, 0, 2, 4),
    (12, 4, 10, 1, 0, 5),
    (-6, 2, 11, 4, 0, 2),
    (-6, 2, 11, 2, 0, 4),
    (1, 0, 12, 3, 0, 3),
)

TERMS_SHA256 = "05d3a4ac0d06ae684e162a79a0dc39862dab3539f813cd8b308976421aa51fed"


def table_digest(terms=TERMS) -> str:
    text = "\n".join(" ".join(str(value) for value in row) for row in terms)
    return hashlib.sha256(text.encode("ascii")).hexdigest()


if table_digest() != TERMS_SHA256:
    raise ImportError("discriminant term table does not match its checksum")
