"""Utility functions."""


def get_line_string():
    return '---------------------------------------------------'


def get_log_step(stepnote, istep=0):
    step = "    " * (istep + 1) + stepnote
    return step


def dims_to_string(dims):
    return 'x'.join(str(int(d)) for d in dims)


def get_dims_from_string(dims):
    parts = dims.replace('x', ',').split(',')
    if len(parts) != 4:
        raise ValueError(f"Expected four dimensions N,C,H,W but got '{dims}'")
    return tuple(int(p) for p in parts)
