"""Desk-scale toolkit for zero-shot generalization across language varieties.

The pipeline has three stages: pick a pair of high-resource source varieties
for an unseen target (embedding-centroid proximity plus length-weighted token
overlap, ranked independently), train a lightweight dual-branch encoder on the
pair (one branch made variety-invariant through a gradient-reversal layer, one
kept variety-specific through a cooperative discriminator), and analyze how
training reshaped the representation space (linear CKA).
"""

__version__ = "0.1.0"
