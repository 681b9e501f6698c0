"""Exception taxonomy shared across the package."""

from __future__ import annotations


class MagicertError(Exception):
    """Base class for all package-specific failures."""


class ParameterError(MagicertError, ValueError):
    """A configuration value is outside its allowed range."""


class KeyLookupError(MagicertError, KeyError):
    """A key id does not resolve to a registered secret record."""


class FamilyMisuseError(MagicertError, TypeError):
    """A trapdoor was used with a decode that its family does not support."""


class ProtocolOrderError(MagicertError, RuntimeError):
    """A session step was invoked out of order."""


class AnswerError(MagicertError):
    """A prover-supplied value violates the protocol; the session aborts."""


class MalformedAnswerError(AnswerError, ValueError):
    """A prover answer has the wrong shape, width or range."""


class ScriptError(AnswerError):
    """A scripted prover ran out of material or is missing a field."""


class TransportError(MagicertError, IOError):
    """The wire connection broke or delivered an invalid frame."""


class TranscriptParseError(MagicertError, ValueError):
    """A stored transcript line could not be decoded."""


class EstimationError(MagicertError, ValueError):
    """A rate estimate was requested from an empty conditional sample."""
