"""Scattering-function toolkit: multiple-bounce Smith microfacet BRDF,
refraction-path masking special functions and a wet-powder BSDF."""
import warnings

warnings.filterwarnings("ignore", message="The TBB threading layer requires TBB version")

__version__ = "0.1.0"
