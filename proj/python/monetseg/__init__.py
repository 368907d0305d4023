# Copyright 2026 The monetseg Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Interactive volumetric segmentation refinement.

Arrays are C-ordered (z, y, x). Scribble arrays are uint8 with 0 for
unlabelled, 1 for foreground and 2 for background voxels.
"""

from ._core import (
    MonetsegError,
    Session,
    adaptive_weights,
    assd,
    corrupt,
    dice,
    geodesic_distance,
    graphcut,
    make_phantom,
    read_label_map,
    read_volume,
    synthesize_scribbles,
    write_label_map,
    write_volume,
)

__all__ = [
    "MonetsegError",
    "Session",
    "adaptive_weights",
    "assd",
    "corrupt",
    "dice",
    "geodesic_distance",
    "graphcut",
    "make_phantom",
    "read_label_map",
    "read_volume",
    "synthesize_scribbles",
    "write_label_map",
    "write_volume",
]
