"""Hierarquia de exceções do pacote."""


class RbError(Exception):
    """Base de todos os erros levantados pelo pacote."""


class ConfigurationError(RbError):
    """Entrada de configuração, malha ou caixa inválida."""


class AssemblyError(RbError):
    """Falha na montagem da discretização MPFA."""


class SingularFaceError(AssemblyError):
    """Face com mobilidade nula dos dois lados."""


class SolverError(RbError):
    """Falha de um solver linear; ``step`` indica o passo de tempo."""

    def __init__(self, message: str, step: int | None = None) -> None:
        super().__init__(message)
        self.step = step


class ModelError(RbError):
    """Modelo inconsistente: G* não SPD, autovalores, LP inviável."""


class DegenerateInputError(ModelError):
    """Snapshot inicial nulo no treinamento do EIM."""


class EstimatorError(RbError):
    """Limites de coercividade inválidos ou base dual ausente."""


class DomainError(RbError):
    """Parâmetro fora dos intervalos configurados."""


class ArchiveError(RbError):
    """Base dos erros de leitura do arquivo binário."""


class ChecksumError(ArchiveError):
    """CRC divergente em algum bloco ou no diretório."""


class VersionError(ArchiveError):
    """Versão do formato não suportada."""


class TruncatedArchiveError(ChecksumError):
    """Arquivo menor do que o diretório declara."""


__all__ = [
    "RbError",
    "ConfigurationError",
    "AssemblyError",
    "SingularFaceError",
    "SolverError",
    "ModelError",
    "DegenerateInputError",
    "EstimatorError",
    "DomainError",
    "ArchiveError",
    "ChecksumError",
    "VersionError",
    "TruncatedArchiveError",
]
