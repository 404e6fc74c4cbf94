"""Kernel backend selection.

The compiled extension is preferred; the numpy fallback is picked up
automatically when the extension was not built. Both produce bit-identical
outputs (the test suite asserts this), so the choice only affects speed.

Set FAULTFORGE_BACKEND=python to force the fallback, e.g. for the
benchmark or to reproduce a no-compiler installation.
"""

import os

from . import _ops_py

if os.environ.get("FAULTFORGE_BACKEND", "").lower() == "python":
    _impl = _ops_py
    BACKEND = "python"
else:
    try:
        from . import _ops_cy as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = _ops_py
        BACKEND = "python"

conv2d = _impl.conv2d
conv3d = _impl.conv3d
linear = _impl.linear
maxpool2d = _impl.maxpool2d
