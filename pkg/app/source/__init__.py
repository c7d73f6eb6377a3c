# Signal source package
