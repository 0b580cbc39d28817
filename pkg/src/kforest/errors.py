"""Exception types raised across the toolkit.

Precondition violations raise; invariant violations found by
``kforest.model.validate`` are reported as data, never raised.
"""

from __future__ import annotations


class KForestError(Exception):
    """Base class for all toolkit errors."""


# --- forest model ---

class UnknownParent(KForestError):
    pass


class DuplicateSibling(KForestError):
    pass


class UnknownFacet(KForestError):
    pass


class TopicMismatch(KForestError):
    pass


class UnknownTopic(KForestError):
    pass


class CyclicDependencies(KForestError):
    """Raised when an operation needs an acyclic dependency set.

    ``cycle`` holds one witness cycle as a topic id sequence whose first
    and last elements coincide.
    """

    def __init__(self, cycle):
        self.cycle = tuple(cycle)
        super().__init__("dependency cycle: " + " -> ".join(self.cycle))


# --- ingestion ---

class MalformedOutline(KForestError):
    pass


class EmptyAfterNormalization(KForestError):
    pass


class SchemaError(KForestError):
    def __init__(self, location, message):
        self.location = location
        super().__init__(f"{location}: {message}")


class IntegrityError(KForestError):
    pass


class DimensionMismatch(KForestError):
    pass


class EmptyTable(KForestError):
    pass


class EmptyRepository(KForestError):
    pass


# --- propagation ---

class HypernymCycle(KForestError):
    def __init__(self, cycle):
        self.cycle = tuple(cycle)
        super().__init__("hypernym cycle: " + " -> ".join(self.cycle))


class NonFiniteProbability(KForestError):
    pass


# --- dependency extraction ---

class EmptyDocument(KForestError):
    pass


class DegenerateLabels(KForestError):
    pass


class UntrainedModel(KForestError):
    pass


# --- fragment assembly ---

class ShapeMismatch(KForestError):
    pass


class EmptyTrainingSet(KForestError):
    pass


class NonFiniteLoss(KForestError):
    pass


class EmptyFacetTree(KForestError):
    pass


# --- serialization ---

class ParseError(KForestError):
    def __init__(self, line, column, message):
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {message}")


class UnknownPredicate(KForestError):
    pass


class DanglingReference(KForestError):
    pass


# --- metrics / synthesis ---

class NoActiveLabels(KForestError):
    pass


class InvalidSpec(KForestError):
    pass
