from rest_framework import serializers

from .diagnostics import Severity


class TrainConfigSerializer(serializers.Serializer):
    """Training settings merged with `--config` overrides. Unknown keys are rejected."""
    epochs = serializers.IntegerField(min_value=1)
    learning_rate = serializers.FloatField()
    beta1 = serializers.FloatField(min_value=0.0)
    beta2 = serializers.FloatField(min_value=0.0)
    epsilon = serializers.FloatField()
    seed = serializers.IntegerField(min_value=0)
    group_size = serializers.IntegerField(min_value=1)
    checkpoint_dir = serializers.CharField()
    validation_every = serializers.IntegerField(min_value=1)

    def validate(self, attrs):
        unknown = sorted(set(self.initial_data) - set(self.fields))
        if unknown:
            raise serializers.ValidationError({key: "unknown training setting" for key in unknown})
        errors = {}
        if attrs["learning_rate"] <= 0:
            errors["learning_rate"] = "must be > 0"
        if attrs["epsilon"] <= 0:
            errors["epsilon"] = "must be > 0"
        for beta in ("beta1", "beta2"):
            if attrs[beta] >= 1.0:
                errors[beta] = "must be < 1"
        if errors:
            raise serializers.ValidationError(errors)
        return attrs


class WorkerSettingsSerializer(serializers.Serializer):
    threads = serializers.IntegerField(min_value=1)


class DiagnosticSerializer(serializers.Serializer):
    severity = serializers.ChoiceField(choices=Severity.choices)
    code = serializers.CharField()
    message = serializers.CharField()
    path = serializers.CharField(allow_blank=True)
    line = serializers.IntegerField(allow_null=True)


class MetricsSerializer(serializers.Serializer):
    loss = serializers.FloatField()
    mre = serializers.FloatField()
    accuracy = serializers.FloatField(allow_null=True)


class EpochRecordSerializer(serializers.Serializer):
    epoch = serializers.IntegerField()
    train_loss = serializers.FloatField()
    val_loss = serializers.FloatField(allow_null=True)
    val_mre = serializers.FloatField(allow_null=True)
    val_accuracy = serializers.FloatField(allow_null=True)
    wall_ms = serializers.FloatField()
