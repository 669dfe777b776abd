from .controller import Delivery, controller_step
from .dynamics import (StateDerivative, absorbed_fraction, absorption_rate, derivatives,
                       integrate, integrate_step, meal_appearance)
from .episode import (WINDOW_SAMPLES, Episode, Label, LabeledWindow, Scenario, extract_windows,
                      read_episode, read_windows, simulate_episode, write_episode,
                      write_windows)
from .params import (ControllerConfig, MealEvent, PatientConfig, PatientParams, SimState,
                     load_patient_config)
from .scenario import ScheduleConfig, make_snack_scenario, simulate_patient

__all__ = [
    "ControllerConfig", "Delivery", "Episode", "Label", "LabeledWindow", "MealEvent",
    "PatientConfig", "PatientParams", "Scenario", "ScheduleConfig", "SimState",
    "StateDerivative", "WINDOW_SAMPLES", "absorbed_fraction", "absorption_rate",
    "controller_step", "derivatives", "extract_windows", "integrate", "integrate_step",
    "load_patient_config", "make_snack_scenario", "meal_appearance", "read_episode",
    "read_windows", "simulate_episode", "simulate_patient", "write_episode", "write_windows",
]
