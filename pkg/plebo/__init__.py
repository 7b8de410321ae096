import warnings
from dotenv import load_dotenv
from scipy.linalg import LinAlgWarning

load_dotenv()

# Ill-conditioned Gram matrices are handled by the jitter ladder in plebo.numerics.
warnings.filterwarnings("ignore", category=LinAlgWarning)

from plebo.version import __version__  # noqa: E402

__all__ = ["__version__"]
