# goal_lab/admin.py
from django.contrib import admin
from django.utils.translation import gettext_lazy as _
from import_export import fields, resources, widgets
from import_export.admin import ImportExportModelAdmin

from .models import MetricsRecord, StitchResult, TrainingRun

# --- Widgets ---

class ExactFloatWidget(widgets.FloatWidget):
    """Shortest round-tripping float text, independent of locale settings."""

    def render(self, value, obj=None, **kwargs):
        return "" if value is None else repr(float(value))


class PlainIntegerWidget(widgets.IntegerWidget):
    def render(self, value, obj=None, **kwargs):
        return "" if value is None else str(int(value))


def _float(column):
    return fields.Field(attribute=column, column_name=column, widget=ExactFloatWidget())


def _int(column):
    return fields.Field(attribute=column, column_name=column, widget=PlainIntegerWidget())


# --- Import-Export Resources ---

class TrainingRunResource(resources.ModelResource):
    class Meta:
        model = TrainingRun
        fields = ('id', 'kind', 'env_id', 'algo', 'reward_mode', 'seeds', 'metrics_path', 'created_at',)
        export_order = fields


class MetricsRecordResource(resources.ModelResource):
    """Column order of every metrics CSV the harness writes."""

    epoch = _int('epoch')
    seed = _int('seed')
    algo = fields.Field(attribute='algo', column_name='algo')
    env = fields.Field(attribute='env_id', column_name='env')
    success_rate = _float('success_rate')
    mean_actor_loss = _float('mean_actor_loss')
    mean_critic_loss = _float('mean_critic_loss')
    mean_q = _float('mean_q')
    mean_weight = _float('mean_weight')
    relabel_fraction = _float('relabel_fraction')
    wall_time = _float('wall_time')
    samples = _int('samples')
    sweep_kind = fields.Field(attribute='sweep_kind', column_name='sweep_kind')
    sweep_value = fields.Field(attribute='sweep_value', column_name='sweep_value')

    class Meta:
        model = MetricsRecord
        fields = ('epoch', 'seed', 'algo', 'env', 'success_rate', 'mean_actor_loss', 'mean_critic_loss',
                  'mean_q', 'mean_weight', 'relabel_fraction', 'wall_time', 'samples', 'sweep_kind', 'sweep_value',)
        export_order = fields


class StitchResultResource(resources.ModelResource):
    seed = _int('seed')
    algo = fields.Field(attribute='algo', column_name='algo')
    env = fields.Field(attribute='env_id', column_name='env')
    seen_success = _float('seen_success')
    cross_success = _float('cross_success')

    class Meta:
        model = StitchResult
        fields = ('env', 'algo', 'seed', 'seen_success', 'cross_success',)
        export_order = fields


METRICS_COLUMNS = MetricsRecordResource.Meta.fields


# --- Admin Classes ---

class MetricsRecordInline(admin.TabularInline):
    model = MetricsRecord
    extra = 0
    fields = ('seed', 'epoch', 'algo', 'success_rate', 'mean_q', 'samples',)
    readonly_fields = fields
    can_delete = False


@admin.register(TrainingRun)
class TrainingRunAdmin(ImportExportModelAdmin):
    resource_classes = [TrainingRunResource]
    list_display = ('env_id', 'algo', 'kind', 'reward_mode', 'created_at',)
    list_filter = ('kind', 'env_id', 'algo', 'reward_mode',)
    search_fields = ('env_id', 'algo', 'metrics_path',)
    inlines = [MetricsRecordInline]
    fieldsets = (
        (None, {'fields': ('kind', 'env_id', 'algo', 'reward_mode', 'seeds')}),
        (_('Outputs'), {'fields': ('metrics_path', 'checkpoint_paths')}),
        (_('Configuration'), {'fields': ('config',), 'classes': ('collapse',)}),
        (_('Timestamps'), {'fields': ('created_at',), 'classes': ('collapse',)}),
    )
    readonly_fields = ('created_at',)


@admin.register(MetricsRecord)
class MetricsRecordAdmin(ImportExportModelAdmin):
    resource_classes = [MetricsRecordResource]
    list_display = ('env_id', 'algo', 'seed', 'epoch', 'success_rate', 'mean_q', 'sweep_kind', 'sweep_value',)
    list_filter = ('env_id', 'algo', 'sweep_kind',)
    search_fields = ('env_id', 'algo',)
    raw_id_fields = ('run',)


@admin.register(StitchResult)
class StitchResultAdmin(ImportExportModelAdmin):
    resource_classes = [StitchResultResource]
    list_display = ('env_id', 'algo', 'seed', 'seen_success', 'cross_success',)
    list_filter = ('env_id', 'algo',)
    raw_id_fields = ('run',)
