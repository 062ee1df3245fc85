"""Speaker-selection-aware beamforming workbench.

Scene simulation for a hearing-aid style four-microphone array, an
image-source room simulator, a trainable time-frequency filter-and-sum
network with hand-written gradients, an oracle MVDR baseline and the
objective metrics used to compare them.
"""

__version__ = "0.1.0"
