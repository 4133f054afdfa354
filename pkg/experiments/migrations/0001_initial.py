# Generated by Django 4.2.6

from django.db import migrations, models
import django.db.models.deletion


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(choices=[('ml-map', 'Likelihood slices'), ('convergence', 'Estimator convergence'), ('track', 'Tracking'), ('rate-curve', 'Achievable rate'), ('monte-carlo', 'Monte-Carlo sweep')], max_length=20)),
                ('preset', models.CharField(blank=True, default='', max_length=50)),
                ('seed', models.CharField(max_length=20)),
                ('config_hash', models.CharField(db_index=True, max_length=64)),
                ('config', models.TextField(default='{}')),
                ('output_dir', models.CharField(max_length=500)),
                ('status', models.CharField(choices=[('finished', 'Finished'), ('failed', 'Failed')], default='finished', max_length=10)),
                ('message', models.TextField(blank=True, default='')),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
            ],
            options={
                'ordering': ('-created_at',),
            },
        ),
        migrations.CreateModel(
            name='RunArtifact',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('file_name', models.CharField(max_length=200)),
                ('rows', models.IntegerField(blank=True, null=True)),
                ('sha256', models.CharField(max_length=64)),
                ('columns', models.TextField(default='[]')),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='artifacts', to='experiments.experimentrun')),
            ],
            options={
                'unique_together': {('run', 'file_name')},
            },
        ),
    ]
