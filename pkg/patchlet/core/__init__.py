# Settings, dependencies, logging and errors
