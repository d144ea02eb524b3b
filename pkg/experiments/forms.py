from django import forms
from django.core.exceptions import ValidationError

from ensembles.weights import PRESET_NAMES

U64_MAX = 2 ** 64 - 1


class ModelSectionForm(forms.Form):
    preset = forms.ChoiceField(choices=[(name, name) for name in PRESET_NAMES])
    theta = forms.FloatField(required=False)
    fillings = forms.JSONField(required=False)
    parameters = forms.JSONField(required=False)

    def clean_theta(self):
        theta = self.cleaned_data.get('theta')
        if theta is None:
            return 1.0
        if not theta > 0:
            raise ValidationError('theta must be positive.')
        return theta

    def clean_fillings(self):
        fillings = self.cleaned_data.get('fillings')
        if fillings is None:
            return None
        if not isinstance(fillings, list) or not all(isinstance(n, (int, float)) and n > 0 for n in fillings):
            raise ValidationError('fillings must be a list of positive numbers.')
        if abs(sum(fillings) - 1.0) > 1e-9:
            raise ValidationError('fillings must sum to 1.')
        return [float(n) for n in fillings]

    def clean_parameters(self):
        parameters = self.cleaned_data.get('parameters')
        if parameters is None:
            return {}
        if not isinstance(parameters, dict):
            raise ValidationError('parameters must be a table of preset parameters.')
        return parameters


class RunSectionForm(forms.Form):
    N = forms.JSONField()
    seed = forms.IntegerField(required=False, min_value=0, max_value=U64_MAX)
    threads = forms.IntegerField(required=False, min_value=1)
    out = forms.CharField(required=False)

    def clean_N(self):
        values = self.cleaned_data.get('N')
        if isinstance(values, int) and not isinstance(values, bool):
            values = [values]
        if not isinstance(values, list) or not values:
            raise ValidationError('N must be a nonempty list of integers.')
        if not all(isinstance(n, int) and not isinstance(n, bool) and n >= 1 for n in values):
            raise ValidationError('every N must be an integer >= 1.')
        return sorted(set(values))


class ChainSectionForm(forms.Form):
    burn_in = forms.IntegerField(required=False, min_value=1)
    samples = forms.IntegerField(required=False, min_value=1)
    thinning = forms.IntegerField(required=False, min_value=1)
    chains = forms.IntegerField(required=False, min_value=1)


class ObservablesSectionForm(forms.Form):
    polynomials = forms.JSONField(required=False)
    points = forms.JSONField(required=False)

    def clean_polynomials(self):
        polys = self.cleaned_data.get('polynomials') or []
        if not isinstance(polys, list) or not all(
            isinstance(p, list) and p and all(isinstance(c, (int, float)) for c in p) for p in polys
        ):
            raise ValidationError('polynomials must be lists of coefficients, lowest degree first.')
        return [[float(c) for c in p] for p in polys]

    def clean_points(self):
        points = self.cleaned_data.get('points') or []
        if not isinstance(points, list) or not all(
            isinstance(z, list) and len(z) == 2 and all(isinstance(c, (int, float)) for c in z) for z in points
        ):
            raise ValidationError('points must be [re, im] pairs.')
        return [[float(z[0]), float(z[1])] for z in points]


class AnalysisSectionForm(forms.Form):
    nekrasov_verify = forms.BooleanField(required=False)
    equilibrium = forms.BooleanField(required=False)
    covariance = forms.BooleanField(required=False)
    clt = forms.BooleanField(required=False)
    lln = forms.BooleanField(required=False)
    tails = forms.BooleanField(required=False)


class EquilibriumSectionForm(forms.Form):
    grid_size = forms.IntegerField(required=False, min_value=64)


class TailsSectionForm(forms.Form):
    radii = forms.JSONField(required=False)

    def clean_radii(self):
        radii = self.cleaned_data.get('radii') or []
        if not isinstance(radii, list) or not all(isinstance(d, (int, float)) and d > 0 for d in radii):
            raise ValidationError('radii must be a list of positive numbers.')
        return [float(d) for d in radii]


SECTION_FORMS = {
    'model': ModelSectionForm,
    'run': RunSectionForm,
    'chain': ChainSectionForm,
    'observables': ObservablesSectionForm,
    'analysis': AnalysisSectionForm,
    'equilibrium': EquilibriumSectionForm,
    'tails': TailsSectionForm,
}
