"""Proactive diagnostic dialogue toolkit.

Subpackages: knowledge graph ranking (:mod:`promed.kgraph`), the dialogue
engine (:mod:`promed.dialogue`), model backends (:mod:`promed.backends`),
synthetic dialogue corpus generation (:mod:`promed.corpus`), fusion math
(:mod:`promed.fusion`), report metrics (:mod:`promed.metrics`), the HTTP
service (:mod:`promed.service`), and the CLI (:mod:`promed.cli`).
"""

__version__ = "0.1.0"
