import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lmkg.kg import ingest_ntriples

# id layout: nodes a=1 b=2 c=3 d=4 e=5; preds p=1 q=2;
# triples {(1,1,2),(1,1,3),(4,1,2),(2,2,5)}
FOUR_TRIPLE_NT = "<a> <p> <b> .\n<a> <p> <c> .\n<d> <p> <b> .\n<b> <q> <e> .\n"


@pytest.fixture
def four_triple_kg():
    return ingest_ntriples(FOUR_TRIPLE_NT)


@pytest.fixture
def book_kg():
    # the worked star-query example: a book with an author and a genre
    return ingest_ntriples(
        "<Book1> <hasAuthor> <StephenKing> .\n"
        "<Book1> <genre> <Horror> .\n"
        "<Book2> <hasAuthor> <StephenKing> .\n"
        "<Book2> <genre> <SciFi> .\n"
        "<StephenKing> <bornIn> <USA> .\n"
    )
