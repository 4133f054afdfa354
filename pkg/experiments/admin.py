from django.contrib import admin

from .models import ExperimentRun, RunArtifact


class RunArtifactInline(admin.TabularInline):
    model = RunArtifact
    extra = 0
    readonly_fields = ('file_name', 'rows', 'sha256', 'columns')


@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = ('name', 'seed', 'preset', 'status', 'created_at')
    list_filter = ('name', 'status')
    search_fields = ('config_hash', 'output_dir')
    inlines = [RunArtifactInline]
