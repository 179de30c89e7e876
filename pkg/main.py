import sys
import signal
import argparse
import logging

from PyQt6.QtCore import QCoreApplication, QObject, QTimer, Qt, pyqtSignal

from experiments import COMMANDS, ScenarioWorker
from settings import Settings

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_FAILED_VERDICT = 1
EXIT_ERROR = 2
EXIT_UNEXPECTED = 3


def build_parser():
    parser = argparse.ArgumentParser(
        prog='hyload',
        description="Hybrid simulation and optimization of on-off loads for primary frequency regulation")
    parser.add_argument('command', choices=COMMANDS)
    parser.add_argument('--scenario', action='append', required=True,
                        help="scenario JSON file (repeat to run a batch)")
    parser.add_argument('--out', default='out', help="output directory")
    parser.add_argument('--seed', type=int, default=0, help="seed for the genetic search")
    parser.add_argument('--format', choices=('csv', 'json'), default='csv', dest='fmt',
                        help="trajectory table format")
    parser.add_argument('--log-level', choices=Settings.VALID_LOG_LEVELS, default=None)
    return parser


def exit_code_for(reports):
    """Worst outcome across the batch"""
    codes = [EXIT_PASS]
    for report in reports:
        if report.sections.get('unexpected'):
            codes.append(EXIT_UNEXPECTED)
        else:
            codes.append(report.exit_code)
    return max(codes)


class BatchRunner(QObject):
    """Starts one worker per scenario and quits the event loop when all have reported"""
    all_finished = pyqtSignal()

    def __init__(self, command, scenarios, out_dir, seed, fmt, settings):
        super().__init__()
        self.reports = []
        self.errors = []
        self.workers = []
        for path in scenarios:
            worker = ScenarioWorker(command, path, out_dir, seed, fmt, settings)
            # Use QueuedConnection for thread-safe signal delivery from worker threads
            worker.progress.connect(self._log_progress, Qt.ConnectionType.QueuedConnection)
            worker.error.connect(self._log_error, Qt.ConnectionType.QueuedConnection)
            worker.finished.connect(self._collect, Qt.ConnectionType.QueuedConnection)
            self.workers.append(worker)

    def start(self):
        for worker in self.workers:
            worker.start()

    def _log_progress(self, message):
        logger.info(message)

    def _log_error(self, message):
        self.errors.append(message)
        logger.warning(f"Worker reported: {message}")

    def _collect(self, report):
        self.reports.append(report)
        status = 'pass' if report.passed else 'FAIL'
        logger.info(f"[{len(self.reports)}/{len(self.workers)}] {report.scenario}: {status}")
        if len(self.reports) == len(self.workers):
            for worker in self.workers:
                worker.wait()
            self.all_finished.emit()


_runner = None


def signal_handler(signum, frame):
    """Handle SIGTERM/SIGINT by waiting for running workers before exiting"""
    logger.info(f"Received signal {signum}, stopping...")
    if _runner is not None:
        for worker in _runner.workers:
            worker.wait()
    sys.exit(EXIT_ERROR)


def main(argv=None):
    global _runner
    args = build_parser().parse_args(argv)
    settings = Settings()
    level = args.log_level or settings.get('log_level')
    logging.basicConfig(level=getattr(logging, level),
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')

    signal.signal(signal.SIGTERM, signal_handler)
    signal.signal(signal.SIGINT, signal_handler)

    try:
        app = QCoreApplication.instance() or QCoreApplication(sys.argv[:1])
        QCoreApplication.setApplicationName("hyload")
        _runner = BatchRunner(args.command, args.scenario, args.out, args.seed, args.fmt, settings)
        _runner.all_finished.connect(app.quit)
        QTimer.singleShot(0, _runner.start)
        app.exec()
    except Exception:
        logger.exception("Batch run failed")
        return EXIT_UNEXPECTED

    code = exit_code_for(_runner.reports)
    logger.info(f"Finished {len(_runner.reports)} scenario(s), exit code {code}")
    return code


if __name__ == '__main__':
    sys.exit(main())
