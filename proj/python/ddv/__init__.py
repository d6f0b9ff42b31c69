from ._ddv import *  # noqa: F401,F403
from ._ddv import __doc__  # noqa: F401
