"""
msmpc: validate, train, predict, evaluate and visualize MSMP models, and
generate the synthetic datasets of the model zoo.

    python manage.py msmpc validate  --model M.yaml [--data ROOT] [--json]
    python manage.py msmpc train     --model M.yaml --data ROOT [--config C.yaml] [--seed N] [--out DIR]
    python manage.py msmpc predict   --model M.yaml --data DIR --checkpoint CKPT --out FILE
    python manage.py msmpc evaluate  --model M.yaml --data DIR --checkpoint CKPT
    python manage.py msmpc visualize --model M.yaml --out FILE.dot
    python manage.py msmpc gen --task {shortest_path,routenet,gqnn} --out DIR --seed N --count N

Exit codes: 0 success, 1 validation errors, 2 usage errors, 3 runtime faults.
"""
import json

from django.core.management.base import BaseCommand, CommandError

from ... import services
from ...diagnostics import format_diagnostics, has_errors, to_json_lines
from ...exceptions import MsmpError, ValidationFailed
from ...serializers import EpochRecordSerializer, MetricsSerializer
from ...zoo.generators import GENERATORS

EXIT_VALIDATION = 1
EXIT_RUNTIME = 3


class Command(BaseCommand):
    help = "Compile, train and run declarative MSMP graph neural networks."
    requires_system_checks = []

    def add_arguments(self, parser):
        subparsers = parser.add_subparsers(dest="subcommand", required=True, metavar="subcommand")

        def add(name, help_text):
            # subparsers must exit with status 2 on usage errors like the main parser
            return subparsers.add_parser(name, help=help_text,
                                         called_from_command_line=parser.called_from_command_line)

        validate = add("validate", "parse and check a model description")
        validate.add_argument("--model", required=True)
        validate.add_argument("--data", help="dataset root or split to check the model against")
        validate.add_argument("--json", action="store_true", help="diagnostics as JSON lines on stdout")

        train = add("train", "train a model on <data>/train")
        train.add_argument("--model", required=True)
        train.add_argument("--data", required=True)
        train.add_argument("--config", help="YAML file of training overrides")
        train.add_argument("--seed", type=int)
        train.add_argument("--out", help="checkpoint directory (default: MSMPC_CHECKPOINT_DIR)")

        predict = add("predict", "write predictions for every sample of a split")
        predict.add_argument("--model", required=True)
        predict.add_argument("--data", required=True)
        predict.add_argument("--checkpoint", required=True)
        predict.add_argument("--out", required=True)

        evaluate = add("evaluate", "print loss / MRE / accuracy of a checkpoint as JSON")
        evaluate.add_argument("--model", required=True)
        evaluate.add_argument("--data", required=True)
        evaluate.add_argument("--checkpoint", required=True)

        visualize = add("visualize", "write the MSMP graph as DOT")
        visualize.add_argument("--model", required=True)
        visualize.add_argument("--out", required=True)

        gen = add("gen", "generate a synthetic dataset")
        gen.add_argument("--task", required=True, choices=sorted(GENERATORS))
        gen.add_argument("--out", required=True)
        gen.add_argument("--seed", type=int, default=0)
        gen.add_argument("--count", type=int, default=100)
        gen.add_argument("--min-nodes", type=int)
        gen.add_argument("--max-nodes", type=int)

    def handle(self, *args, **options):
        subcommand = options["subcommand"]
        try:
            getattr(self, f"handle_{subcommand}")(options)
        except ValidationFailed as exc:
            self.stderr.write(format_diagnostics(exc.diagnostics, options.get("model") or ""))
            raise CommandError(str(exc), returncode=EXIT_VALIDATION) from exc
        except (MsmpError, OSError) as exc:
            raise CommandError(f"{subcommand} failed: {exc}", returncode=EXIT_RUNTIME) from exc

    def handle_validate(self, options):
        model, diagnostics = services.read_model(options["model"])
        if model is not None and options["data"] and not has_errors(diagnostics):
            diagnostics = diagnostics + services.check_against_data(model, options["data"])
        if options["json"]:
            self.stdout.write(to_json_lines(diagnostics), ending="")
        elif diagnostics:
            self.stderr.write(format_diagnostics(diagnostics, options["model"]))
        if has_errors(diagnostics):
            errors = sum(d.is_error for d in diagnostics)
            raise CommandError(f"{options['model']}: {errors} error(s)", returncode=EXIT_VALIDATION)

    def handle_train(self, options):
        result = services.run_training(
            options["model"], options["data"], options["config"], options["seed"], options["out"],
        )
        for record in EpochRecordSerializer(result.history, many=True).data:
            self.stdout.write(json.dumps(dict(record)))

    def handle_predict(self, options):
        services.predict_dataset(options["model"], options["data"], options["checkpoint"], options["out"])

    def handle_evaluate(self, options):
        metrics = services.evaluate_dataset(options["model"], options["data"], options["checkpoint"])
        self.stdout.write(json.dumps(dict(MetricsSerializer(metrics).data)))

    def handle_visualize(self, options):
        services.write_dot(options["model"], options["out"])

    def handle_gen(self, options):
        services.generate(
            options["task"], options["out"],
            seed=options["seed"], count=options["count"],
            min_nodes=options["min_nodes"], max_nodes=options["max_nodes"],
        )
