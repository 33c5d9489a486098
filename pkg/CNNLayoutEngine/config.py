import json
import logging
import os
import sys

logger = logging.getLogger('CLE.Config')

MANDATORY_CONFIG_VARIABLES = []

RECOMMENDED_CONFIG_VARIABLES = {
    'CALIBRATION_FILE': 'calibration.txt'
}

# optional variables with default values
OPTIONAL_CONFIG_VARIABLES = {
    'BENCH_HW_CAP': 64,
    'BENCH_REPEATS': 5,
    'BENCH_SCALE': 8,
    'GEMM_BLOCK': 64,
    'LAYOUT_PRESET': 'titan-black',
    'POOL_ACCUMULATOR_CAP': 64,
    'POOL_COARSENING': [2, 2],
    'PROFILE_REFINE': False,
    'RANDOM_SEED': 42,
    'SERIAL': False,
    'SOFTMAX_BLOCK': 256,
    'SOFTMAX_LOCAL_BUFFER': 16384,
    'TRANSFORM_TILE': 32,
    'USE_FFT': False
}


class RequiredConfigError(RuntimeError):
    pass


class Config:

    def __init__(self, init_mode='from_json', file_name=None, config_dict=None):
        # Details in README
        self.BENCH_HW_CAP = None  # cap on H and W for scaled benchmark fixtures (pixels)
        self.BENCH_REPEATS = None  # timed repetitions per benchmark row (median is reported)
        self.BENCH_SCALE = None  # divisor applied to the batch size N of benchmark fixtures
        self.CALIBRATION_FILE = None  # path to the per-host calibration record
        self.GEMM_BLOCK = None  # cache block edge of the GEMM core (elements)
        self.LAYOUT_PRESET = None  # options: 'titan-black', 'titan-x'
        self.POOL_ACCUMULATOR_CAP = None  # upper bound on fh*fw for coarsened pooling
        self.POOL_COARSENING = None  # 'autotune' or [fh, fw]
        self.PROFILE_REFINE = None  # refine heuristic layouts by one-time profiling
        self.RANDOM_SEED = None  # seed for inputs and weights
        self.SERIAL = None  # pin kernels to a single worker thread
        self.SOFTMAX_BLOCK = None  # reduction block of the fused softmax (elements)
        self.SOFTMAX_LOCAL_BUFFER = None  # rows longer than this are streamed (elements)
        self.TRANSFORM_TILE = None  # tile edge of the layout transformation (elements)
        self.USE_FFT = None  # run NCHW convolutions through the FFT path where supported

        if init_mode == 'from_json':
            assert file_name
            self.read_from_json(file_name)
        elif init_mode == 'from_dict':
            assert config_dict is not None
            self.read_from_dict(config_dict)
        elif init_mode == 'default':
            self.read_from_dict({})
        else:
            msg = (f"Init mode '{init_mode}' for config is invalid. Supported options are 'from_json', 'from_dict' "
                   f"and 'default'.")
            logger.error(msg)
            raise ValueError(msg)

        env_calibration = os.getenv('CLE_CALIBRATION_FILE')
        if env_calibration:
            logger.info(f"Calibration file taken from CLE_CALIBRATION_FILE: {env_calibration}")
            self.CALIBRATION_FILE = env_calibration

        if self.POOL_COARSENING != 'autotune':
            if len(self.POOL_COARSENING) != 2 or min(self.POOL_COARSENING) < 1:
                raise ValueError("POOL_COARSENING has to be 'autotune' or a pair [fh, fw] of positive integers")
            if self.POOL_COARSENING[0] * self.POOL_COARSENING[1] > self.POOL_ACCUMULATOR_CAP:
                raise ValueError('POOL_COARSENING exceeds POOL_ACCUMULATOR_CAP')

        if self.BENCH_SCALE < 1:
            raise ValueError('BENCH_SCALE has to be at least 1')

    def print(self):
        logger.info(f"Config variables: \n{json.dumps(self.__dict__, indent=4)}")

    def read_from_dict(self, config_dict):
        self._set_mandatory_config(config_dict)
        self._set_recommended_config(config_dict)
        self._set_optional_config(config_dict)

    def read_from_json(self, json_file):
        with open(json_file) as f:
            config_dict = json.load(f)
            self.read_from_dict(config_dict)

    def _set_mandatory_config(self, config_dict):
        for mandatory_var in MANDATORY_CONFIG_VARIABLES:
            if mandatory_var not in config_dict.keys():
                raise RequiredConfigError(f"'{mandatory_var}' is mandatory!")
            else:
                setattr(self, mandatory_var, config_dict[mandatory_var])

    def _set_recommended_config(self, config_dict):
        for recommended_var, default_value in RECOMMENDED_CONFIG_VARIABLES.items():
            if recommended_var not in config_dict.keys():
                logger.warning(f"'{recommended_var}' was not provided in the config and is set to the default value")
                setattr(self, recommended_var, default_value)
            else:
                setattr(self, recommended_var, config_dict[recommended_var])

    def _set_optional_config(self, config_dict):
        for optional_var, default_value in OPTIONAL_CONFIG_VARIABLES.items():
            if optional_var not in config_dict.keys():
                setattr(self, optional_var, default_value)
            else:
                setattr(self, optional_var, config_dict[optional_var])


def set_up_logging(info_log_file=None, warnings_log_file=None, debug=False, stream=sys.stdout,
                   log_format='%(asctime)s - %(name)-12s: %(levelname)-8s %(message)s'):
    logging.basicConfig(stream=stream, format=log_format)
    logger = logging.getLogger('CLE')
    logger.setLevel(logging.DEBUG if debug else logging.INFO)
    formatter = logging.Formatter(log_format)
    _add_file_handler(logger, info_log_file, logging.INFO, formatter)
    _add_file_handler(logger, warnings_log_file, logging.WARNING, formatter)
    return logger


def _add_file_handler(logger, log_file, level, formatter):
    if not log_file:
        return
    if not os.path.isdir(os.path.dirname(os.path.abspath(log_file))):
        logger.warning(f"Logging file '{log_file}' doesn't exist and cannot be created.")
        return
    handler = logging.FileHandler(log_file, mode='w')
    handler.setLevel(level)
    handler.setFormatter(formatter)
    logger.addHandler(handler)
