from ._bodyrep import *  # noqa: F401,F403
