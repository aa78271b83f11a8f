__author__ = "mimoc"

"""
Copyright 2024 The mimoc authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

     http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.

Author: mimoc team
Date: June 20th 2024
Description:
    CLI error handling
"""
import functools
import logging

import click

from mimoc.exceptions import MimocError


def exit_on_error(command):
    """Turn mimoc errors raised by a CLI command into a message and the error's exit code.

    Configuration and usage errors exit with 2, numerical failures with 3, others with 1.
    """

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except MimocError as e:
            logging.debug("CLI failure", exc_info=True)
            click.echo(f"Error: {e}", err=True)
            raise click.exceptions.Exit(e.exit_code)

    return wrapper
