"""Graph poisoning laboratory.

Inject adversarial nodes into an attributed graph and learn, via
hierarchical Q-learning, where to wire them and how to label them so that
a GCN trained on the poisoned graph loses accuracy.  Ships density- and
degree-matched baselines, a gradient-guided baseline, a graph-statistics
auditor, and a seeded experiment runner.
"""

__version__ = "0.1.0"
