"""Utility functions."""
from astropy import units as u

FLOAT32_BYTES = 4 * u.byte


def elements_to_bytes(nelements):
    return (nelements * FLOAT32_BYTES).to(u.byte)


def bandwidth_gbps(nbytes, nanos):
    """Effective bandwidth in GB/s for `nbytes` moved in `nanos` nanoseconds."""
    if nanos <= 0:
        return float('inf')
    nbytes = nbytes if isinstance(nbytes, u.Quantity) else nbytes * u.byte
    return (nbytes / (nanos * u.ns)).to(u.GB / u.s).value


def nanos_to_millis(nanos):
    return (nanos * u.ns).to(u.ms).value
