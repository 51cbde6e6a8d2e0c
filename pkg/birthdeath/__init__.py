"""birthdeath: hitting times, spectra and separation for birth-death processes"""
