# Core Modules
