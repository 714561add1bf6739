"""Single-qubit tomography with stretched-tetrahedron POVMs.

Submodules: ``qstate``, ``povm``, ``bounds``, ``naimark``, ``noisekit``,
``fitkit``, ``adaptive``, ``bayes``, ``estimators`` and ``cli``.
"""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0+unknown"
