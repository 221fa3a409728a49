#!/usr/bin/env python3
"""
Test runner for the MixNorm harness
Runs the test categories through pytest with consistent reporting
"""

import argparse
import shutil
import subprocess
import sys
import time
from pathlib import Path
from typing import List, Optional

from rich.console import Console
from rich.table import Table

console = Console()


class TestRunner:
    """Main test runner class"""

    __test__ = False

    def __init__(self):
        self.project_root = Path(__file__).parent.parent

        self.categories = {
            'all': ('Run every test except the slow reproductions', []),
            'unit': ('Run unit tests only (fast)',
                     ['--ignore=tests/integration', '--ignore=tests/performance']),
            'integration': ('Run integration tests', ['-m', 'integration and not slow']),
            'performance': ('Run performance tests', ['-m', 'performance']),
            'slow': ('Run the multi-seed directional reproductions', ['-m', 'slow']),
            'gradcheck': ('Run the gradient checks', ['tests/test_gradcheck.py']),
            'cli': ('Run CLI command tests', ['tests/test_cli.py']),
            'coverage': ('Run tests with coverage report', []),
        }

    def check_dependencies(self) -> bool:
        """Check the test dependencies import"""
        missing = []
        for package in ['pytest', 'pytest_cov', 'pytest_mock', 'numpy', 'pandas', 'click', 'rich', 'yaml']:
            try:
                __import__(package)
            except ImportError:
                missing.append(package)

        if missing:
            console.print(f"[red]Missing required packages: {', '.join(missing)}[/red]")
            console.print("Install them with: pip install -r requirements.txt")
            return False
        return True

    def build_pytest_command(self, category: str, extra_args: Optional[List[str]] = None) -> List[str]:
        cmd = [sys.executable, '-m', 'pytest', '-v', '--tb=short', '--color=yes']
        _, category_args = self.categories[category]
        cmd.extend(category_args)

        if category in ('all', 'coverage'):
            cmd.extend(['--cov=src', '--cov=cli', '--cov-report=term-missing', '--cov-report=html:htmlcov'])
        if extra_args:
            cmd.extend(extra_args)
        return cmd

    def run_tests(self, category: str = 'all', extra_args: Optional[List[str]] = None,
                  failfast: bool = False) -> int:
        console.rule(f"[bold]Running {category} tests")
        if not self.check_dependencies():
            return 1

        cmd = self.build_pytest_command(category, extra_args)
        if failfast:
            cmd.append('-x')
        console.print(f"[blue]Command:[/blue] {' '.join(cmd)}")

        start_time = time.time()
        try:
            exit_code = subprocess.run(cmd, cwd=self.project_root).returncode
        except KeyboardInterrupt:
            console.print("[yellow]Tests interrupted by user[/yellow]")
            return 130
        duration = time.time() - start_time

        if exit_code == 0:
            console.print(f"[green]✓ All {category} tests passed in {duration:.2f} seconds[/green]")
            if category in ('all', 'coverage'):
                console.print("Coverage report generated: htmlcov/index.html")
        else:
            console.print(f"[red]✗ Tests failed with exit code {exit_code} after {duration:.2f} seconds[/red]")
        return exit_code

    def clean_artifacts(self):
        """Remove pytest caches, coverage output and bytecode"""
        for name in ['.pytest_cache', 'htmlcov', '.coverage']:
            path = self.project_root / name
            if path.is_dir():
                shutil.rmtree(path)
            elif path.exists():
                path.unlink()
        for cache in self.project_root.rglob('__pycache__'):
            shutil.rmtree(cache, ignore_errors=True)
        console.print("[green]✓ Cleanup completed[/green]")

    def show_categories(self):
        table = Table(title="Test categories")
        table.add_column("Category", style="cyan")
        table.add_column("Description")
        for name, (description, _) in self.categories.items():
            table.add_row(name, description)
        console.print(table)


def main() -> int:
    parser = argparse.ArgumentParser(description="Test runner for the MixNorm harness")
    parser.add_argument('category', nargs='?', default='all', help='Test category to run (default: all)')
    parser.add_argument('--failfast', '-x', action='store_true', help='Stop on first failure')
    parser.add_argument('--list', '-l', action='store_true', help='List test categories')
    parser.add_argument('--clean', action='store_true', help='Clean test artifacts')
    args, extra_args = parser.parse_known_args()

    runner = TestRunner()
    if args.list:
        runner.show_categories()
        return 0
    if args.clean:
        runner.clean_artifacts()
        return 0
    if args.category.startswith('tests/'):
        return runner.run_tests('all', extra_args=[args.category] + extra_args, failfast=args.failfast)
    if args.category not in runner.categories:
        console.print(f"[red]Unknown category: {args.category}[/red]")
        runner.show_categories()
        return 1
    return runner.run_tests(args.category, extra_args=extra_args, failfast=args.failfast)


if __name__ == '__main__':
    sys.exit(main())
