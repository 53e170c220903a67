# goal_lab/forms.py
"""
Validation of experiment configuration.

Configuration arrives as strings (``key=value`` files and ``--set`` flags);
the forms below type-check it and build the frozen AgentConfig / RunConfig.
"""
from pathlib import Path

from django import forms
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

from .agents import AgentConfig, normalize_algo
from .envs import ENV_CHOICES, RewardMode
from .exceptions import UnknownAlgorithmError
from .harness import DEFAULT_SEEDS, PRESETS, RunConfig, lab_setting

TRUE_WORDS = {"1", "true", "yes", "on"}
FALSE_WORDS = {"0", "false", "no", "off"}


def parse_config_text(text, source="config"):
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    values = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValidationError(_("%(source)s line %(line)d is not key=value: %(text)r"),
                                  params={"source": source, "line": line_no, "text": raw})
        values[key.strip()] = value.strip()
    return values


def read_config_file(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(_("Cannot read config file %(path)s: %(error)s"),
                              params={"path": path, "error": exc}) from exc
    return parse_config_text(text, source=str(path))


def parse_overrides(pairs):
    return parse_config_text("\n".join(pairs or []), source="--set")


def _as_text(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(getattr(value, "value", value))


def _normalize_boolean(value):
    word = str(value).strip().lower()
    if word in TRUE_WORDS:
        return "true"
    if word in FALSE_WORDS:
        return "false"
    return value


class AgentConfigForm(forms.Form):
    gamma = forms.FloatField(label=_("Discount"), max_value=1.0)
    polyak_retain = forms.FloatField(label=_("Target retain fraction"), min_value=0.0, max_value=1.0)
    lr_actor = forms.FloatField(label=_("Actor learning rate"))
    lr_critic = forms.FloatField(label=_("Critic learning rate"))
    batch_size = forms.IntegerField(label=_("Batch size"), min_value=1)
    eta = forms.FloatField(label=_("Imitation coefficient"), min_value=0.0)
    action_l2 = forms.FloatField(label=_("Action L2 penalty"), min_value=0.0)
    random_eps = forms.FloatField(label=_("Random action probability"), min_value=0.0, max_value=1.0)
    noise_eps = forms.FloatField(label=_("Exploration noise (fraction of bound)"), min_value=0.0)
    relabel_prob = forms.FloatField(label=_("Relabel probability"), min_value=0.0, max_value=1.0)
    clip_lo = forms.FloatField(label=_("Weight clip low"), min_value=0.0)
    clip_hi = forms.FloatField(label=_("Weight clip high"), min_value=1.0)
    adv_quantile = forms.FloatField(label=_("Advantage quantile"), min_value=0.0, max_value=1.0)
    eps_min = forms.FloatField(label=_("Weight floor below threshold"), max_value=1.0)
    awr_temperature = forms.FloatField(label=_("Advantage temperature"))
    algo = forms.CharField(label=_("Algorithm"))
    hidden_units = forms.IntegerField(label=_("Hidden units per layer"), min_value=1)

    def clean_algo(self):
        try:
            return normalize_algo(self.cleaned_data["algo"])
        except UnknownAlgorithmError as exc:
            raise ValidationError(str(exc)) from exc

    def clean(self):
        cleaned_data = super().clean()
        if not self.errors:
            try:
                self.config = AgentConfig(**cleaned_data)
            except ValidationError as exc:
                for name, messages in exc.message_dict.items():
                    self.add_error(name if name in self.fields else None, messages)
        return cleaned_data


class RunConfigForm(forms.Form):
    env_id = forms.ChoiceField(label=_("Environment"), choices=ENV_CHOICES)
    reward_mode = forms.ChoiceField(label=_("Reward mode"), choices=RewardMode.choices)
    action_noise = forms.FloatField(label=_("Action noise std"), min_value=0.0)
    squared_distance = forms.NullBooleanField(label=_("Squared-distance goal test"))
    reward_on_current = forms.NullBooleanField(label=_("Reward on the current state"))
    seeds = forms.CharField(label=_("Seeds"), help_text=_("Comma or space separated integers."))
    epochs = forms.IntegerField(label=_("Epochs"), min_value=1)
    cycles_per_epoch = forms.IntegerField(label=_("Cycles per epoch"), min_value=1)
    episodes_per_cycle = forms.IntegerField(label=_("Episodes per cycle"), min_value=1)
    batches_per_cycle = forms.IntegerField(label=_("Batches per cycle"), min_value=1)
    eval_rollouts = forms.IntegerField(label=_("Evaluation rollouts"), min_value=1)
    buffer_size = forms.IntegerField(label=_("Buffer capacity (transitions)"), min_value=1)
    output_dir = forms.CharField(label=_("Output directory"), required=False)
    record_wall_time = forms.NullBooleanField(label=_("Record wall time"))

    def _clean_flag(self, name):
        value = self.cleaned_data.get(name)
        if value is None:
            raise ValidationError(_("Expected true or false."))
        return value

    def clean_squared_distance(self):
        return self._clean_flag("squared_distance")

    def clean_reward_on_current(self):
        return self._clean_flag("reward_on_current")

    def clean_record_wall_time(self):
        return self._clean_flag("record_wall_time")

    def clean_seeds(self):
        text = self.cleaned_data["seeds"].replace(",", " ")
        try:
            seeds = tuple(int(token) for token in text.split())
        except ValueError as exc:
            raise ValidationError(_("Seeds must be integers.")) from exc
        if not seeds:
            raise ValidationError(_("At least one seed is required."))
        return seeds


def default_values():
    """Every configurable field as text, project settings applied."""
    defaults = RunConfig(seeds=lab_setting("DEFAULT_SEEDS", DEFAULT_SEEDS),
                         record_wall_time=lab_setting("RECORD_WALL_TIME", False))
    values = {name: _as_text(getattr(defaults, name)) for name in RunConfig.field_names()}
    values.update({name: _as_text(getattr(defaults.agent, name)) for name in AgentConfig.field_names()})
    return values


def build_run_config(overrides=None, preset=None):
    """
    Merge overrides onto the defaults, validate both forms and return a RunConfig.
    A named preset sits between the defaults and the overrides.
    """
    overrides = dict(overrides or {})
    if preset and preset not in PRESETS:
        raise ValidationError({"preset": ValidationError(_("Unknown preset %(name)s."), params={"name": preset})})
    known = set(RunConfig.field_names()) | set(AgentConfig.field_names())
    unknown = sorted(set(overrides) - known)
    if unknown:
        raise ValidationError({key: _("Unknown configuration key.") for key in unknown})

    values = default_values()
    values.update({key: _as_text(value) for key, value in PRESETS.get(preset, {}).items()})
    values.update({key: _as_text(value) for key, value in overrides.items()})
    for name in ("squared_distance", "reward_on_current", "record_wall_time"):
        values[name] = _normalize_boolean(values[name])

    agent_form = AgentConfigForm(data={name: values[name] for name in AgentConfig.field_names()})
    run_form = RunConfigForm(data={name: values[name] for name in RunConfig.field_names()})
    errors = {}
    if not agent_form.is_valid():
        errors.update(agent_form.errors.get_json_data())
    if not run_form.is_valid():
        errors.update(run_form.errors.get_json_data())
    if errors:
        raise ValidationError({name: [e["message"] for e in messages] for name, messages in errors.items()})

    return RunConfig(agent=agent_form.config, **run_form.cleaned_data)
