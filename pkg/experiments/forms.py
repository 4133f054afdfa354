"""
Validation forms for the scenario configuration sections.

Each JSON section is bound to one form; Django's field machinery gives typed,
per-field error messages, and ``clean()`` carries the cross-field invariants.
"""
import math

from django import forms
from django.core.exceptions import ValidationError

from estimation.line_search import Direction


def positive(value):
    if value is not None and not (math.isfinite(value) and value > 0):
        raise ValidationError(f"Must be positive, got {value}.")


class FloatListField(forms.Field):
    """A list of floats, given as a JSON list or a comma-separated string."""

    def to_python(self, value):
        if value in self.empty_values:
            return []
        if isinstance(value, str):
            value = [part for part in value.split(',') if part.strip()]
        try:
            return [float(item) for item in value]
        except (TypeError, ValueError):
            raise ValidationError("Enter a list of numbers.")


class PointListField(forms.Field):
    """A list of (x, y) pairs in metres."""

    def to_python(self, value):
        if value in self.empty_values:
            return []
        try:
            points = [(float(x), float(y)) for x, y in value]
        except (TypeError, ValueError):
            raise ValidationError("Enter a list of [x, y] pairs.")
        return points


class PhysicalForm(forms.Form):
    carrier_frequency = forms.FloatField(validators=[positive])
    bandwidth = forms.FloatField(validators=[positive])
    num_antennas = forms.IntegerField(min_value=2)
    spacing = forms.CharField()
    tx_gain = forms.FloatField(validators=[positive])
    rx_gain = forms.FloatField(validators=[positive])
    rcs_db = forms.FloatField()
    noise_density_dbm_hz = forms.FloatField()

    def clean_spacing(self):
        # 'half-wavelength' or an explicit spacing in metres
        value = self.cleaned_data['spacing']
        if value == 'half-wavelength':
            return value
        try:
            spacing = float(value)
        except ValueError:
            raise ValidationError("Use 'half-wavelength' or a spacing in metres.")
        positive(spacing)
        return spacing


class CpiForm(forms.Form):
    num_symbols = forms.IntegerField(min_value=1)
    count = forms.IntegerField(min_value=1, required=False)


class PowerForm(forms.Form):
    transmit_dbm = forms.FloatField(required=False)
    transmit_w = forms.FloatField(required=False, validators=[positive])
    levels_dbm = FloatListField(required=False)

    def clean(self):
        cleaned = super().clean()
        if cleaned.get('transmit_dbm') is not None and cleaned.get('transmit_w') is not None:
            raise ValidationError("Give the transmit power in dBm or in W, not both.")
        return cleaned


class TargetForm(forms.Form):
    r = forms.FloatField(validators=[positive])
    theta_deg = forms.FloatField()
    v_r = forms.FloatField()
    v_theta = forms.FloatField()

    def clean_theta_deg(self):
        value = self.cleaned_data['theta_deg']
        if not 0 < value < 180:
            raise ValidationError("Angle must lie strictly between 0 and 180 degrees.")
        return value


class TrajectoryForm(forms.Form):
    waypoints = PointListField(required=False)
    speed = forms.FloatField(required=False, validators=[positive])
    initial_error_r = forms.FloatField(required=False)
    initial_error_theta_deg = forms.FloatField(required=False)

    def clean(self):
        cleaned = super().clean()
        waypoints = cleaned.get('waypoints')
        if waypoints and len(waypoints) < 2:
            self.add_error('waypoints', "Need at least two waypoints.")
        if waypoints and cleaned.get('speed') is None:
            self.add_error('speed', "Required when waypoints are given.")
        return cleaned


class EstimatorForm(forms.Form):
    max_iters = forms.IntegerField(min_value=1)
    grad_tol = forms.FloatField(validators=[positive])
    step_tol = forms.FloatField(validators=[positive])
    init_v_r = forms.FloatField()
    init_v_theta = forms.FloatField()
    shrink = forms.FloatField()
    sufficient_increase = forms.FloatField()
    initial_step = forms.FloatField(required=False, validators=[positive])
    coarse_grid = forms.BooleanField(required=False)
    grid_v_max = forms.FloatField(validators=[positive])
    grid_points = forms.IntegerField(min_value=2)
    direction = forms.ChoiceField(choices=[(d.value, d.value) for d in Direction])

    def clean_shrink(self):
        value = self.cleaned_data['shrink']
        if not 0 < value < 1:
            raise ValidationError("Must lie in (0, 1).")
        return value

    def clean_sufficient_increase(self):
        value = self.cleaned_data['sufficient_increase']
        if not 0 < value < 1:
            raise ValidationError("Must lie in (0, 1).")
        return value


class ExperimentForm(forms.Form):
    distances = FloatListField()
    receive_snr_db = forms.FloatField()
    slice_min = forms.FloatField()
    slice_max = forms.FloatField()
    slice_points = forms.IntegerField(min_value=2)
    curvature_step = forms.FloatField(validators=[positive])
    trials = forms.IntegerField(min_value=1)
    workers = forms.IntegerField(min_value=1)
    noise = forms.BooleanField(required=False)
    inject_truth = forms.BooleanField(required=False)

    def clean_distances(self):
        distances = self.cleaned_data['distances']
        if not distances:
            raise ValidationError("Give at least one distance.")
        for distance in distances:
            positive(distance)
        return distances

    def clean(self):
        cleaned = super().clean()
        lo, hi = cleaned.get('slice_min'), cleaned.get('slice_max')
        if lo is not None and hi is not None and not lo < hi:
            raise ValidationError("slice_min must be smaller than slice_max.")
        return cleaned


class OutputForm(forms.Form):
    directory = forms.CharField(required=False)
    formats = forms.MultipleChoiceField(choices=[('csv', 'csv'), ('json', 'json')])


SECTION_FORMS = {
    'physical': PhysicalForm,
    'cpi': CpiForm,
    'power': PowerForm,
    'target': TargetForm,
    'trajectory': TrajectoryForm,
    'estimator': EstimatorForm,
    'experiment': ExperimentForm,
    'output': OutputForm,
}
