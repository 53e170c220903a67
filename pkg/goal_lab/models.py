# goal_lab/models.py
import uuid

from django.core.exceptions import ValidationError
from django.db import models
from django.utils.translation import gettext_lazy as _

from .envs import RewardMode


class RunKind(models.TextChoices):
    TRAIN = "train", _("Training")
    SWEEP = "sweep", _("Ablation sweep")
    STITCH = "stitch", _("Offline stitching")


class TrainingRun(models.Model):
    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    kind = models.CharField(_("Kind"), max_length=16, choices=RunKind.choices, default=RunKind.TRAIN)
    env_id = models.CharField(_("Environment"), max_length=64)
    algo = models.CharField(_("Algorithm"), max_length=32, blank=True,
                            help_text=_("Blank when the run covers several algorithms."))
    reward_mode = models.CharField(_("Reward Mode"), max_length=16, choices=RewardMode.choices,
                                   default=RewardMode.SPARSE)
    seeds = models.JSONField(_("Seeds"), default=list)
    config = models.JSONField(_("Configuration"), default=dict)
    metrics_path = models.CharField(_("Metrics File"), max_length=500, blank=True)
    checkpoint_paths = models.JSONField(_("Checkpoints"), default=list, blank=True)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ["-created_at"]
        verbose_name = _("Training Run")
        verbose_name_plural = _("Training Runs")

    def __str__(self):
        label = self.algo or "several algorithms"
        return f"{self.get_kind_display()} {self.env_id} / {label} ({self.created_at:%Y-%m-%d %H:%M})"


class MetricsRecord(models.Model):
    """One evaluation row per (epoch, seed). Rows may stay unsaved for CSV-only runs."""

    run = models.ForeignKey(TrainingRun, on_delete=models.CASCADE, related_name="metrics",
                            null=True, blank=True)
    epoch = models.PositiveIntegerField(_("Epoch"))
    seed = models.IntegerField(_("Seed"))
    algo = models.CharField(_("Algorithm"), max_length=32)
    env_id = models.CharField(_("Environment"), max_length=64)
    success_rate = models.FloatField(_("Success Rate"))
    mean_actor_loss = models.FloatField(_("Mean Actor Loss"), default=0.0)
    mean_critic_loss = models.FloatField(_("Mean Critic Loss"), default=0.0)
    mean_q = models.FloatField(_("Mean Q"), default=0.0)
    mean_weight = models.FloatField(_("Mean Imitation Weight"), default=0.0)
    relabel_fraction = models.FloatField(_("Relabel Fraction"), default=0.0)
    wall_time = models.FloatField(_("Wall Time (s)"), default=0.0)
    samples = models.PositiveBigIntegerField(_("Samples Consumed"), default=0)
    sweep_kind = models.CharField(_("Sweep Kind"), max_length=32, blank=True)
    sweep_value = models.CharField(_("Sweep Value"), max_length=32, blank=True)

    class Meta:
        ordering = ["run", "sweep_kind", "sweep_value", "algo", "seed", "epoch"]
        verbose_name = _("Metrics Record")
        verbose_name_plural = _("Metrics Records")

    def __str__(self):
        return f"{self.env_id}/{self.algo} seed {self.seed} epoch {self.epoch}: {self.success_rate:.2f}"

    def clean(self):
        if not 0.0 <= self.success_rate <= 1.0:
            raise ValidationError({"success_rate": _("Success rate must lie in [0, 1].")})


class StitchResult(models.Model):
    run = models.ForeignKey(TrainingRun, on_delete=models.CASCADE, related_name="stitch_results",
                            null=True, blank=True)
    env_id = models.CharField(_("Environment"), max_length=64)
    algo = models.CharField(_("Algorithm"), max_length=32)
    seed = models.IntegerField(_("Seed"))
    seen_success = models.FloatField(_("Seen-Pair Success"))
    cross_success = models.FloatField(_("Cross-Pair Success"))

    class Meta:
        ordering = ["run", "algo", "seed"]
        verbose_name = _("Stitch Result")
        verbose_name_plural = _("Stitch Results")

    def __str__(self):
        return f"{self.env_id}/{self.algo} seed {self.seed}: seen {self.seen_success:.2f}, cross {self.cross_success:.2f}"
