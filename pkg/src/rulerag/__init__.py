"""Rule-guided retrieval-augmented question answering."""

from rulerag.kg import Document, Fact, build_corpus, linearize, load_corpus, parse_kg
from rulerag.rules import Rule, load_rules, mine_rules, save_rules, textualize

__all__ = [
    "Document",
    "Fact",
    "Rule",
    "build_corpus",
    "linearize",
    "load_corpus",
    "load_rules",
    "mine_rules",
    "parse_kg",
    "save_rules",
    "textualize",
]

__version__ = "0.1.0"
