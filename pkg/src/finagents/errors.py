"""Exception hierarchy shared across the package."""


class FinAgentsError(Exception):
    """Base class for every error raised by this package."""


# transcript model
class AppendAfterTermination(FinAgentsError):
    pass


class SeqGap(FinAgentsError):
    pass


class UnknownViewer(FinAgentsError):
    pass


# orchestration
class NotRoundRobin(FinAgentsError):
    pass


class MissingName(FinAgentsError):
    pass


class InvalidStructure(FinAgentsError):
    pass


class TurnCapExceeded(FinAgentsError):
    """Main-scope turn cap hit. Carries the transcript as it stood."""

    def __init__(self, message, transcript=None):
        super().__init__(message)
        self.transcript = transcript


class NestedTurnCapExceeded(TurnCapExceeded):
    pass


# backend
class BackendFailure(FinAgentsError):
    def __init__(self, message, transient=False, turn=None):
        super().__init__(message)
        self.transient = transient
        self.turn = turn


class InvalidRequest(FinAgentsError):
    pass


class UnknownToolRequested(FinAgentsError):
    pass


class DecodeError(FinAgentsError):
    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


# tools
class ToolError(FinAgentsError):
    """Any failure of a tool invocation that should be reported back to the agent."""


class UnknownTool(ToolError):
    pass


class ArgValidation(ToolError):
    def __init__(self, param, reason):
        super().__init__(f"argument {param!r}: {reason}")
        self.param = param
        self.reason = reason


class LeakageViolation(ToolError):
    def __init__(self, field, requested, limit):
        super().__init__(f"{field}={requested} is after the release date {limit}")
        self.field = field
        self.requested = requested
        self.limit = limit


class ProviderError(ToolError):
    pass


class UnknownTask(FinAgentsError):
    pass


# rag
class EmptyDocument(FinAgentsError):
    pass


class EmbedderFailure(FinAgentsError):
    pass


class EmptyIndex(FinAgentsError):
    pass


# evaluation
class UnparsableJudgeOutput(FinAgentsError):
    pass


class NonPositiveActual(FinAgentsError):
    pass


class EmptyRecordSet(FinAgentsError):
    pass


class IncompleteTable(FinAgentsError):
    pass


class MissingDecisionBlock(FinAgentsError):
    pass


class MalformedDecisionBlock(FinAgentsError):
    pass


class MissingSubReport(FinAgentsError):
    pass


# experiment runner
class ConfigError(FinAgentsError):
    pass
