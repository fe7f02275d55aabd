"""
Shared plumbing for the grounding management commands.

Every command records its execution in CommandExecutionLog, supports
--status, and turns domain errors into CommandError with a stable exit code:

    0  ok
    2  usage or configuration error
    3  I/O error (missing, unreadable, unwritable or corrupt files)
    4  numeric failure (non-finite loss or gradients)
"""

import logging
import traceback

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from django.db import DatabaseError

from grounding.checkpoints import CheckpointError
from grounding.conf import ConfigError
from grounding.evaluation import StatisticsError
from grounding.features import ArchiveError, RecordNotFoundError, SynthAttributeError, SynthConfigError
from grounding.keyvalue import KeyValueError
from grounding.models import CommandExecutionLog, TrainingRun
from grounding.network import ModelConfigError, NonFiniteError, ShapeError
from grounding.snare import AnnotationError, EmptySplitError
from grounding.training import TrainConfigError
from grounding.voxels import FactorValidationError

logger = logging.getLogger('grounding.management.commands')

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

# Checked in order; the first matching class wins
EXIT_CODES = (
    ((NonFiniteError, StatisticsError), EXIT_NUMERIC),
    ((ConfigError, ModelConfigError, TrainConfigError, SynthConfigError, SynthAttributeError,
      EmptySplitError, ShapeError), EXIT_USAGE),
    ((OSError, UnicodeDecodeError, ArchiveError, CheckpointError, AnnotationError, RecordNotFoundError,
      KeyValueError, FactorValidationError), EXIT_IO),
)


def exit_code_for(exc: BaseException) -> int | None:
    """Exit code for a domain error, or None for anything unexpected."""
    if isinstance(exc, CommandError):
        return exc.returncode
    for classes, code in EXIT_CODES:
        if isinstance(exc, classes):
            return code
    return None


def usage_error(message: str) -> CommandError:
    return CommandError(message, returncode=EXIT_USAGE)


class GroundingCommand(BaseCommand):
    """
    Base class for the grounding commands.

    Subclasses implement add_command_arguments() and run(**options); run may
    return a dict of details that is stored on the execution log.
    """

    def add_arguments(self, parser):
        self.add_command_arguments(parser)
        parser.add_argument(
            '--status',
            action='store_true',
            help='Show status of last command execution and exit',
        )

    def add_command_arguments(self, parser):
        pass

    @property
    def command_name(self) -> str:
        return self.__module__.rsplit('.', 1)[-1]

    def default_seed(self) -> int:
        return settings.VLG_SEED

    def handle(self, *args, **options):
        if options['status']:
            return self._show_status()

        execution_log = self._start_log(options)
        logger.info(f"Starting {self.command_name} command", extra={'options': _loggable(options)})

        try:
            details = self.run(**options) or {}
        except Exception as exc:
            code = exit_code_for(exc)
            if code is None:
                error_msg = f"Command failed with error: {exc}"
                logger.critical(error_msg, exc_info=True)
                self._finish_failure(execution_log, error_msg, 1, {'traceback': traceback.format_exc()})
                raise
            logger.error(
                f"{self.command_name} failed: {exc}",
                extra={'exit_code': code, 'error_type': type(exc).__name__},
            )
            self._finish_failure(execution_log, str(exc), code, {'error_type': type(exc).__name__})
            if isinstance(exc, CommandError):
                raise
            raise CommandError(str(exc), returncode=code) from exc

        logger.info(f"Completed {self.command_name}", extra={'details': details})
        if execution_log:
            execution_log.finish_success(details=details)

    def run(self, **options) -> dict | None:
        raise NotImplementedError('subclasses of GroundingCommand must provide a run() method')

    def _start_log(self, options):
        try:
            return CommandExecutionLog.start(self.command_name, details={'options': _loggable(options)})
        except DatabaseError:
            logger.warning("Run bookkeeping unavailable; run 'migrate' to enable it")
            return None

    def record_training_run(self, record, record_path):
        """Store a finished run as a TrainingRun row; None when the database is unavailable."""
        try:
            return TrainingRun.from_record(record, record_path)
        except DatabaseError:
            logger.warning(
                "Training run not recorded; run 'migrate' to enable run bookkeeping",
                extra={'record_path': str(record_path)},
            )
            return None

    def _finish_failure(self, execution_log, error_message, exit_code, details):
        if execution_log:
            execution_log.finish_failure(error_message=error_message, exit_code=exit_code, details=details)

    def _show_status(self):
        """Show status of last command execution."""
        last_run = CommandExecutionLog.get_last_run(self.command_name)
        last_success = CommandExecutionLog.get_last_success(self.command_name)

        self.stdout.write(f"\n=== {self.command_name} Status ===\n")

        if last_run:
            self.stdout.write(f"Last run: {last_run.started_at}")
            self.stdout.write(f"  Status: {last_run.status}")
            if last_run.exit_code is not None:
                self.stdout.write(f"  Exit code: {last_run.exit_code}")
            if last_run.error_message:
                self.stdout.write(f"  Error: {last_run.error_message}")
        else:
            self.stdout.write("No execution history found.")

        if last_success and last_success != last_run:
            self.stdout.write(f"\nLast successful run: {last_success.started_at}")


def _loggable(options: dict) -> dict:
    """Command options minus Django's own plumbing, as JSON-safe values."""
    skipped = {'stdout', 'stderr', 'skip_checks', 'no_color', 'force_color', 'traceback',
               'pythonpath', 'settings', 'verbosity', 'status'}
    loggable = {}
    for key, value in options.items():
        if key in skipped:
            continue
        if isinstance(value, (list, tuple)):
            loggable[key] = [str(item) for item in value]
        elif value is None or isinstance(value, (bool, int, float, str)):
            loggable[key] = value
        else:
            loggable[key] = str(value)
    return loggable
