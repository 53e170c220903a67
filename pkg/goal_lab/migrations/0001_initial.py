import uuid

import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="TrainingRun",
            fields=[
                ("id", models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ("kind", models.CharField(choices=[("train", "Training"), ("sweep", "Ablation sweep"), ("stitch", "Offline stitching")], default="train", max_length=16, verbose_name="Kind")),
                ("env_id", models.CharField(max_length=64, verbose_name="Environment")),
                ("algo", models.CharField(blank=True, help_text="Blank when the run covers several algorithms.", max_length=32, verbose_name="Algorithm")),
                ("reward_mode", models.CharField(choices=[("sparse", "Sparse (0 inside the goal ball, -1 outside)"), ("indicator", "Indicator (1 inside the goal ball, 0 outside)")], default="sparse", max_length=16, verbose_name="Reward Mode")),
                ("seeds", models.JSONField(default=list, verbose_name="Seeds")),
                ("config", models.JSONField(default=dict, verbose_name="Configuration")),
                ("metrics_path", models.CharField(blank=True, max_length=500, verbose_name="Metrics File")),
                ("checkpoint_paths", models.JSONField(blank=True, default=list, verbose_name="Checkpoints")),
                ("created_at", models.DateTimeField(auto_now_add=True)),
            ],
            options={
                "verbose_name": "Training Run",
                "verbose_name_plural": "Training Runs",
                "ordering": ["-created_at"],
            },
        ),
        migrations.CreateModel(
            name="MetricsRecord",
            fields=[
                ("id", models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name="ID")),
                ("epoch", models.PositiveIntegerField(verbose_name="Epoch")),
                ("seed", models.IntegerField(verbose_name="Seed")),
                ("algo", models.CharField(max_length=32, verbose_name="Algorithm")),
                ("env_id", models.CharField(max_length=64, verbose_name="Environment")),
                ("success_rate", models.FloatField(verbose_name="Success Rate")),
                ("mean_actor_loss", models.FloatField(default=0.0, verbose_name="Mean Actor Loss")),
                ("mean_critic_loss", models.FloatField(default=0.0, verbose_name="Mean Critic Loss")),
                ("mean_q", models.FloatField(default=0.0, verbose_name="Mean Q")),
                ("mean_weight", models.FloatField(default=0.0, verbose_name="Mean Imitation Weight")),
                ("relabel_fraction", models.FloatField(default=0.0, verbose_name="Relabel Fraction")),
                ("wall_time", models.FloatField(default=0.0, verbose_name="Wall Time (s)")),
                ("samples", models.PositiveBigIntegerField(default=0, verbose_name="Samples Consumed")),
                ("sweep_kind", models.CharField(blank=True, max_length=32, verbose_name="Sweep Kind")),
                ("sweep_value", models.CharField(blank=True, max_length=32, verbose_name="Sweep Value")),
                ("run", models.ForeignKey(blank=True, null=True, on_delete=django.db.models.deletion.CASCADE, related_name="metrics", to="goal_lab.trainingrun")),
            ],
            options={
                "verbose_name": "Metrics Record",
                "verbose_name_plural": "Metrics Records",
                "ordering": ["run", "sweep_kind", "sweep_value", "algo", "seed", "epoch"],
            },
        ),
        migrations.CreateModel(
            name="StitchResult",
            fields=[
                ("id", models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name="ID")),
                ("env_id", models.CharField(max_length=64, verbose_name="Environment")),
                ("algo", models.CharField(max_length=32, verbose_name="Algorithm")),
                ("seed", models.IntegerField(verbose_name="Seed")),
                ("seen_success", models.FloatField(verbose_name="Seen-Pair Success")),
                ("cross_success", models.FloatField(verbose_name="Cross-Pair Success")),
                ("run", models.ForeignKey(blank=True, null=True, on_delete=django.db.models.deletion.CASCADE, related_name="stitch_results", to="goal_lab.trainingrun")),
            ],
            options={
                "verbose_name": "Stitch Result",
                "verbose_name_plural": "Stitch Results",
                "ordering": ["run", "algo", "seed"],
            },
        ),
    ]
